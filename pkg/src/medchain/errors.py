"""Exception hierarchy shared across the package."""


class MedchainError(Exception):
    """Base class for every error raised by medchain."""


class CryptoError(MedchainError):
    pass


class DecryptionError(CryptoError):
    """Authenticated decryption failed (wrong key or tampered ciphertext)."""


class MerkleError(MedchainError):
    pass


class ContractError(MedchainError):
    pass


class AuthorizationError(MedchainError):
    pass


class StoreError(MedchainError):
    pass


class OverlayError(MedchainError):
    pass


class MiningRejected(OverlayError):
    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class AccessError(MedchainError):
    pass


class ScenarioError(MedchainError):
    pass
