"""twofe: two-factor encrypted cloud storage.

Two user devices each hold an additive share of a master secret and jointly
derive per-file encryption keys through a verifiable threshold PRF; the cloud
stores ciphertexts plus recovery sub-shares and can restore availability after
a device is lost, without ever being able to read anything.
"""

__version__ = "0.1.0"
