"""Smart-bag telemetry and activity recognition toolkit.

A simulated sensor source feeds a checksummed line protocol into a gateway,
which pushes JSON telemetry into a small Firebase-style document store. A
dense feedforward network trained on labeled sensor readings classifies the
wearer's activity, and an alert service turns classified records into
SOS / gas / water / activity notifications.
"""

__version__ = "0.1.0"
