from stallpay.constant import BASIS_POINTS, HOUR, WEEK_HOURS, EPOCH_HOUR_OFFSET, MAX_FUNDS

from .exceptions import InvalidArgument, Overflow


def ceil_div(numerator, denominator):
    return -(-numerator // denominator)


def bp_share(amount, basis_points):
    """floor(amount * basis_points / 10000)"""
    return amount * basis_points // BASIS_POINTS


def check_basis_points(value, name='rate'):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0 or value > BASIS_POINTS:
        raise InvalidArgument('{} must be an integer between 0 and {} basis points, got {}'.format(name, BASIS_POINTS, value))
    return value


def check_funds(value, name='amount'):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise InvalidArgument('{} must be a non-negative integer, got {}'.format(name, value))
    if value > MAX_FUNDS:
        raise Overflow('{} {} exceeds the largest amount {}'.format(name, value, MAX_FUNDS))
    return value


def checked_add(a, b):
    total = a + b
    if total > MAX_FUNDS:
        raise Overflow('{} + {} overflows'.format(a, b))
    return total


def get_week_hour(t, hour_offset=EPOCH_HOUR_OFFSET):
    """Index 0..167 of the hour of the week that contains t. 0 is Monday 00h."""
    return (t // HOUR + hour_offset) % WEEK_HOURS


def get_hour_range(t):
    """The [start, end) of the wall-clock hour that contains t."""
    t1 = t - t % HOUR
    return (t1, t1 + HOUR)


def create_ref(queryset, prefix, new_ref=None):
    """
    Next free `<prefix>:<n>` within the queryset, n counting from 1.

    Rows are never deleted, so the count is stable across identical runs.
    """
    if new_ref is not None:
        ref = new_ref
    else:
        ref = '{}:{}'.format(prefix, queryset.count() + 1)
        pass
    if queryset.filter(ref=ref).exists():
        number = int(ref.rsplit(':', 1)[1]) + 1
        return create_ref(queryset, prefix, new_ref='{}:{}'.format(prefix, number))
    return ref


def pre_save_ref_receiver(sender, instance, *args, **kwargs):
    # Models declare REF_PREFIX and ref_queryset() to get a stable `<prefix>:<n>` ref.
    if not instance.ref:
        instance.ref = create_ref(instance.ref_queryset(), instance.REF_PREFIX)
        pass
    pass


def same_account(a, b):
    return a is not None and b is not None and a.pk == b.pk
