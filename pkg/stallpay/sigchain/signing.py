"""
Keys, canonical voucher encoding, signing and verification.

Vouchers are ed25519 signatures (deterministic for fixed inputs) over a
fixed 40-byte message: the 32-byte channel id followed by the cumulative
amount as an 8-byte big-endian integer.
"""
import hashlib
from dataclasses import dataclass

from nacl.exceptions import CryptoError
from nacl.signing import SigningKey, VerifyKey

CHANNEL_ID_SIZE = 32
AMOUNT_SIZE = 8
MESSAGE_SIZE = CHANNEL_ID_SIZE + AMOUNT_SIZE
SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 32

KEY_DOMAIN = b'stallpay/key/v1'


def address_of(public):
    """Address of a verification key: the first 32 bytes of its SHA-256."""
    return hashlib.sha256(bytes(public)).digest()[:32]


@dataclass(frozen=True)
class KeyPair:
    secret: bytes
    public: bytes

    @classmethod
    def from_seed(cls, seed):
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0 or seed >= 2**64:
            raise ValueError('key seed must be an unsigned 64-bit integer, got {!r}'.format(seed))
        secret = hashlib.sha256(KEY_DOMAIN + seed.to_bytes(8, 'big')).digest()
        public = bytes(SigningKey(secret).verify_key)
        return cls(secret=secret, public=public)

    @property
    def address(self):
        return address_of(self.public)

    def __repr__(self):
        return 'KeyPair(public={})'.format(self.public.hex())

    pass


@dataclass(frozen=True)
class Voucher:
    channel_id: bytes
    cumulative: int
    signature: bytes

    @property
    def message(self):
        return encode_voucher(self.channel_id, self.cumulative)

    def to_wire(self):
        return self.message + self.signature

    def hex(self):
        return self.to_wire().hex()

    @classmethod
    def from_wire(cls, data):
        data = bytes(data)
        if len(data) < MESSAGE_SIZE:
            raise ValueError('voucher wire form needs at least {} bytes, got {}'.format(MESSAGE_SIZE, len(data)))
        return cls(channel_id=data[:CHANNEL_ID_SIZE],
                   cumulative=int.from_bytes(data[CHANNEL_ID_SIZE:MESSAGE_SIZE], 'big'),
                   signature=data[MESSAGE_SIZE:])

    @classmethod
    def from_hex(cls, text):
        return cls.from_wire(bytes.fromhex(text))

    pass


def encode_voucher(channel_id, cumulative):
    channel_id = bytes(channel_id)
    if len(channel_id) != CHANNEL_ID_SIZE:
        raise ValueError('channel id must be {} bytes, got {}'.format(CHANNEL_ID_SIZE, len(channel_id)))
    if isinstance(cumulative, bool) or not isinstance(cumulative, int) or not 0 <= cumulative < 2**64:
        raise ValueError('cumulative must be an unsigned 64-bit integer, got {!r}'.format(cumulative))
    return channel_id + cumulative.to_bytes(AMOUNT_SIZE, 'big')


def sign_voucher(keys, channel_id, cumulative):
    message = encode_voucher(channel_id, cumulative)
    signature = SigningKey(keys.secret).sign(message).signature
    return Voucher(channel_id=bytes(channel_id), cumulative=cumulative, signature=bytes(signature))


def verify_voucher(public, voucher):
    """True iff the voucher's signature is valid under `public`. Never raises."""
    try:
        message = encode_voucher(voucher.channel_id, voucher.cumulative)
        signature = bytes(voucher.signature)
        if len(signature) != SIGNATURE_SIZE:
            return False
        VerifyKey(bytes(public)).verify(message, signature)
    except (CryptoError, ValueError, TypeError, AttributeError):
        return False
    return True
