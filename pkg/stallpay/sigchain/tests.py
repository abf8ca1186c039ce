from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from .signing import (CHANNEL_ID_SIZE, MESSAGE_SIZE, KeyPair, Voucher, address_of, encode_voucher,
                      sign_voucher, verify_voucher)

CHANNEL = bytes(range(32))


class KeyPairTests(SimpleTestCase):

    def test_keys_are_deterministic(self):
        self.assertEqual(KeyPair.from_seed(7), KeyPair.from_seed(7))
        self.assertNotEqual(KeyPair.from_seed(7).public, KeyPair.from_seed(8).public)
        pass

    def test_address_is_hash_of_public_key(self):
        keys = KeyPair.from_seed(1)
        self.assertEqual(len(keys.address), 32)
        self.assertEqual(keys.address, address_of(keys.public))
        pass

    def test_seed_range(self):
        for bad in (-1, 2**64, 'seed', True):
            with self.assertRaises(ValueError):
                KeyPair.from_seed(bad)
                pass
            pass
        pass

    def test_repr_hides_secret(self):
        keys = KeyPair.from_seed(3)
        self.assertNotIn(keys.secret.hex(), repr(keys))
        pass

    pass


class VoucherTests(SimpleTestCase):

    def setUp(self):
        self.keys = KeyPair.from_seed(11)
        pass

    def test_message_layout(self):
        message = encode_voucher(CHANNEL, 258)
        self.assertEqual(len(message), MESSAGE_SIZE)
        self.assertEqual(message[:CHANNEL_ID_SIZE], CHANNEL)
        self.assertEqual(message[CHANNEL_ID_SIZE:], (258).to_bytes(8, 'big'))
        pass

    def test_encode_rejects_bad_input(self):
        with self.assertRaises(ValueError):
            encode_voucher(b'short', 1)
        with self.assertRaises(ValueError):
            encode_voucher(CHANNEL, -1)
        with self.assertRaises(ValueError):
            encode_voucher(CHANNEL, 2**64)
        pass

    def test_sign_and_verify(self):
        voucher = sign_voucher(self.keys, CHANNEL, 1200)
        self.assertTrue(verify_voucher(self.keys.public, voucher))
        self.assertEqual(voucher, sign_voucher(self.keys, CHANNEL, 1200))
        pass

    def test_wire_form(self):
        voucher = sign_voucher(self.keys, CHANNEL, 1200)
        self.assertEqual(len(voucher.to_wire()), MESSAGE_SIZE + 64)
        self.assertEqual(Voucher.from_hex(voucher.hex()), voucher)
        with self.assertRaises(ValueError):
            Voucher.from_wire(b'\x00' * 10)
        with self.assertRaises(ValueError):
            Voucher.from_hex('zz')
        pass

    def test_tampering_is_detected(self):
        voucher = sign_voucher(self.keys, CHANNEL, 1200)
        other = KeyPair.from_seed(12)
        self.assertFalse(verify_voucher(other.public, voucher))
        self.assertFalse(verify_voucher(self.keys.public, Voucher(CHANNEL, 1201, voucher.signature)))
        self.assertFalse(verify_voucher(self.keys.public, Voucher(bytes(32), 1200, voucher.signature)))
        self.assertFalse(verify_voucher(self.keys.public, Voucher(CHANNEL, 1200, voucher.signature[:-1])))
        self.assertFalse(verify_voucher(b'short', voucher))
        pass

    @settings(max_examples=300)
    @given(st.binary(max_size=200), st.integers(min_value=0, max_value=2**64 - 1))
    def test_verify_never_raises(self, data, cumulative):
        self.assertFalse(verify_voucher(self.keys.public, Voucher(CHANNEL, cumulative, data)))
        self.assertFalse(verify_voucher(data, Voucher(data[:32], cumulative, data)))
        pass

    @settings(max_examples=100)
    @given(st.integers(min_value=0, max_value=MESSAGE_SIZE + 63), st.integers(min_value=0, max_value=7))
    def test_bit_flips_break_signature(self, position, bit):
        voucher = sign_voucher(self.keys, CHANNEL, 5000)
        wire = bytearray(voucher.to_wire())
        wire[position] ^= 1 << bit
        self.assertFalse(verify_voucher(self.keys.public, Voucher.from_wire(bytes(wire))))
        pass

    pass
