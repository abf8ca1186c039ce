"""
Off-ledger voucher exchange for one payment channel.

Nothing here touches the ledger: the driver emits cumulative vouchers, the
payee checks them and keeps the best one for settlement.
"""
from dataclasses import dataclass, field
from typing import Optional

from common.exceptions import InvalidArgument, InvalidState
from sigchain.signing import KeyPair, Voucher, sign_voucher, verify_voucher
from stlog import logger

from .policy import WeekHourPolicy


@dataclass
class OffchainSession:
    channel_id: bytes
    payer_public: bytes
    locked: int
    opened_at: int
    park_until: int
    policy: WeekHourPolicy
    # Only the driver's side holds the signing keys.
    payer_keys: Optional[KeyPair] = field(default=None, repr=False)
    last_emitted: int = 0
    last_accepted: int = 0
    last_voucher: Optional[Voucher] = None
    is_open: bool = True

    @classmethod
    def for_channel(cls, channel, with_keys=True):
        """Session state for a `payments.models.Channel` row."""
        return cls(channel_id=channel.id_bytes,
                   payer_public=channel.payer.public,
                   locked=channel.locked,
                   opened_at=channel.opened_at,
                   park_until=channel.park_until,
                   policy=channel.policy,
                   payer_keys=channel.payer.keys if with_keys else None)

    def owed_at(self, now):
        end = min(now, self.park_until)
        return min(self.policy.total_price(self.opened_at, end), self.locked)

    def next_voucher(self, now):
        if not self.is_open:
            raise InvalidState('channel {} is closed'.format(self.channel_id.hex()))
        if now < self.opened_at:
            raise InvalidArgument('time {} is before the channel opened at {}'.format(now, self.opened_at))
        if self.payer_keys is None:
            raise InvalidState('this side of the session cannot sign vouchers')
        cumulative = max(self.owed_at(now), self.last_emitted)
        voucher = sign_voucher(self.payer_keys, self.channel_id, cumulative)
        self.last_emitted = cumulative
        return voucher

    def accept_voucher(self, voucher):
        accepted = (self.is_open and
                    voucher.channel_id == self.channel_id and
                    self.last_accepted < voucher.cumulative <= self.locked and
                    verify_voucher(self.payer_public, voucher))
        if accepted:
            self.last_accepted = voucher.cumulative
            self.last_voucher = voucher
        else:
            logger.debug("channel {}: voucher for {} rejected".format(self.channel_id.hex()[:16], voucher.cumulative))
            pass
        return accepted

    def close(self):
        self.is_open = False
        pass

    pass


def next_voucher(session, now):
    return session.next_voucher(now)


def accept_voucher(session, voucher):
    return session.accept_voucher(voucher)
