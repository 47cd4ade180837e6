"""confab: model-driven configuration of IoT local clouds.

Devices are described against a fixed feature metamodel, commissions state
desired post-conditions, and a factory turns them into checksummed packages
that are rolled out by pull, push or peer seeding while business-scenario
constraints are guarded by the scheduler.
"""

__version__ = "0.1.0"
