"""Offline scanner for unpacked Android ROM trees.

Finds system properties and system settings that store non-resettable device
identifiers, and decides from the ROM's SELinux policy and framework
annotations whether an unprivileged third-party app can read them.
"""

__version__ = "0.1.0"
