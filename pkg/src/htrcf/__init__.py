"""Group key management for ad hoc networks: power-aware group-manager
election, KDC key issuance, DH verification and join/leave rekeying, with a
deterministic simulator."""

__version__ = "0.1.0"
