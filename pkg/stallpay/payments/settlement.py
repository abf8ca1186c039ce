from dataclasses import asdict, dataclass

from common.exceptions import InvalidArgument
from common.utils import bp_share, check_basis_points, check_funds
from stallpay.constant import BASIS_POINTS


@dataclass(frozen=True)
class SettlementBreakdown:
    claimed: int
    tax: int
    service: int
    landlord: int
    operator: int
    refund: int

    @property
    def locked(self):
        return self.claimed + self.refund

    def as_dict(self):
        return asdict(self)

    pass


def split_claim(locked, claimed, tax_rate=0, service_share=0, landlord_share=0):
    """
    Distribute a claimed amount out of a locked deposit.

    Each share is floor(claimed * bp / 10000) of the gross claim; the operator
    takes what is left, the payer gets back locked - claimed.
    """
    check_funds(locked, 'locked')
    check_funds(claimed, 'claimed')
    for name, value in (('tax rate', tax_rate), ('service share', service_share), ('landlord share', landlord_share)):
        check_basis_points(value, name)
        pass
    if claimed > locked:
        raise InvalidArgument('claim {} exceeds the locked {}'.format(claimed, locked))
    if tax_rate + service_share + landlord_share > BASIS_POINTS:
        raise InvalidArgument('shares add up to {} basis points'.format(tax_rate + service_share + landlord_share))

    tax = bp_share(claimed, tax_rate)
    service = bp_share(claimed, service_share)
    landlord = bp_share(claimed, landlord_share)
    return SettlementBreakdown(claimed=claimed,
                               tax=tax,
                               service=service,
                               landlord=landlord,
                               operator=claimed - tax - service - landlord,
                               refund=locked - claimed)
