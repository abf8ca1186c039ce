"""Immutable read-only values handed out by the ledger."""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping, Tuple


@dataclass(frozen=True)
class EventRecord:
    index: int
    time: int
    kind: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'payload', MappingProxyType(dict(self.payload)))
        pass

    pass


@dataclass(frozen=True)
class AccountBalance:
    address: str
    label: str
    balance: int
    pass


@dataclass(frozen=True)
class LedgerSnapshot:
    time: int
    balances: Tuple[AccountBalance, ...]
    escrows: Tuple[Tuple[str, int], ...]
    event_count: int
    genesis_total: int

    @property
    def balance_total(self):
        return sum(entry.balance for entry in self.balances)

    @property
    def escrow_total(self):
        return sum(amount for _, amount in self.escrows)

    @property
    def conserved(self):
        return self.balance_total + self.escrow_total == self.genesis_total

    def balance_of(self, address_or_label):
        for entry in self.balances:
            if address_or_label in (entry.address, entry.label):
                return entry.balance
        raise KeyError(address_or_label)

    def by_label(self):
        return {entry.label: entry.balance for entry in self.balances}

    pass
