"""
Payment policies.

A policy answers two questions: the rate at a given time, and the total
price of parking between two times. WeekHourPolicy is the provided
implementation: a 7 x 24 grid of hourly rates, index 0 being Monday 00h.
"""
from dataclasses import dataclass
from typing import Protocol, Tuple, runtime_checkable

from common.exceptions import InvalidArgument
from common.utils import ceil_div, get_hour_range, get_week_hour
from stallpay.constant import EPOCH_HOUR_OFFSET, HOUR, WEEK, WEEK_HOURS


@runtime_checkable
class PaymentPolicy(Protocol):
    def rate_at(self, t: int) -> int:
        ...

    def total_price(self, start: int, end: int) -> int:
        ...

    pass


@dataclass(frozen=True)
class WeekHourPolicy:
    rates: Tuple[int, ...]
    hour_offset: int = EPOCH_HOUR_OFFSET

    def __post_init__(self):
        rates = tuple(self.rates)
        if len(rates) != WEEK_HOURS:
            raise InvalidArgument('a week-hour grid has {} rates, got {}'.format(WEEK_HOURS, len(rates)))
        for rate in rates:
            if isinstance(rate, bool) or not isinstance(rate, int) or rate < 0:
                raise InvalidArgument('rates are non-negative integers, got {!r}'.format(rate))
            pass
        offset = self.hour_offset
        if isinstance(offset, bool) or not isinstance(offset, int) or not 0 <= offset < WEEK_HOURS:
            raise InvalidArgument('hour offset must be between 0 and {}, got {!r}'.format(WEEK_HOURS - 1, offset))
        object.__setattr__(self, 'rates', rates)
        pass

    @classmethod
    def uniform(cls, rate):
        return cls(rates=(rate,) * WEEK_HOURS)

    @property
    def weekly_sum(self):
        return sum(self.rates)

    def rate_at(self, t):
        return self.rates[get_week_hour(t, self.hour_offset)]

    def total_price(self, start, end):
        """
        ceil(sum over hour slots of seconds_in_slot * rate / 3600), rounded once.

        Whole weeks are priced from the weekly sum; the rest walks hour slots.
        """
        if start > end:
            raise InvalidArgument('interval starts at {} after it ends at {}'.format(start, end))
        weeks = (end - start) // WEEK
        # rate-seconds
        accrued = weeks * self.weekly_sum * HOUR
        t = start + weeks * WEEK
        while t < end:
            _, slot_end = get_hour_range(t)
            slot_end = min(slot_end, end)
            accrued += (slot_end - t) * self.rate_at(t)
            t = slot_end
            pass
        return ceil_div(accrued, HOUR)

    def to_json(self):
        return list(self.rates)

    pass


def rate_at(policy, t):
    return policy.rate_at(t)


def total_price(policy, start, end):
    return policy.total_price(start, end)
