"""Error taxonomy. Every protocol-visible failure is a TwofeError subclass
with a stable code; the CLI maps codes to exit statuses 1:1."""

from __future__ import annotations


class TwofeError(Exception):
    code = "error"
    exit_code = 1


class EncodingError(TwofeError):
    """Malformed scalar, point, or wire encoding."""
    code = "invalid-encoding"
    exit_code = 10


class EntropyError(TwofeError):
    code = "entropy-failure"
    exit_code = 11


class ProtocolOrderError(TwofeError):
    """Out-of-order or replayed message inside a session."""
    code = "protocol-order"
    exit_code = 12


class SrAbort(TwofeError):
    code = "sr-abort"
    exit_code = 13


class BadProofError(TwofeError):
    """The helper device answered with a key share that does not match the
    enrolled public key; no key material was derived."""
    code = "bad-proof"
    exit_code = 14


class PolicyDenied(TwofeError):
    code = "policy-denied"
    exit_code = 15


class AuthFailure(TwofeError):
    """AEAD authentication failed: wrong key, tampered data, or wrong tag."""
    code = "auth-failure"
    exit_code = 16


class UnknownTag(TwofeError):
    code = "unknown-tag"
    exit_code = 17


class TagExists(TwofeError):
    code = "tag-exists"
    exit_code = 18


class BadToken(TwofeError):
    code = "bad-token"
    exit_code = 19


class CloudUnreachable(TwofeError):
    code = "cloud-unreachable"
    exit_code = 20


class PairingFailure(TwofeError):
    code = "pairing-failure"
    exit_code = 21


class DuplicateEnrollment(TwofeError):
    code = "duplicate-enrollment"
    exit_code = 22


class VerificationFailed(TwofeError):
    code = "verification-failed"
    exit_code = 23


class ApprovalDenied(TwofeError):
    """User declined a migration/recovery authorization on the old device."""
    code = "approval-denied"
    exit_code = 24


class OldDeviceUnreachable(TwofeError):
    code = "old-device-unreachable"
    exit_code = 25


class OldDeviceResponded(TwofeError):
    """Recovery was requested but the old device is alive; use migration."""
    code = "old-device-responded"
    exit_code = 26


class NameNotFound(TwofeError):
    code = "name-not-found"
    exit_code = 27


class CatalogError(TwofeError):
    code = "catalog-decrypt-failure"
    exit_code = 28


class UnknownAccount(TwofeError):
    code = "unknown-account"
    exit_code = 29


class UnknownRequest(TwofeError):
    code = "unknown-request"
    exit_code = 30


class AlreadyDecided(TwofeError):
    code = "already-decided"
    exit_code = 31


class PeerUnreachable(TwofeError):
    code = "peer-unreachable"
    exit_code = 32


class RecoveryLocked(TwofeError):
    """Too many failed identity verification attempts; cooling down."""
    code = "recovery-locked"
    exit_code = 33


class DeploymentUnreachable(TwofeError):
    code = "deployment-unreachable"
    exit_code = 34


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, TwofeError):
        return exc.exit_code
    return 1
