"""
Funds-flow report.

Everything but the genesis balances is folded from the event log, so the
report can be recomputed from an events file alone.
"""
from ledger.models import EventKind, OCCUPANCY_KINDS, TRANSFER_KINDS, VIOLATION_KINDS

BREAKDOWN_FIELDS = ('claimed', 'tax', 'service', 'landlord', 'operator', 'refund')


def fold_balances(genesis, events):
    """Balances per address and open escrow per key after replaying `events` on `genesis`."""
    balances = dict(genesis)
    escrows = {}
    for event in events:
        payload = event.payload
        if event.kind == EventKind.TRANSFER:
            balances[payload['sender']] -= payload['amount']
            balances[payload['receiver']] += payload['amount']
        elif event.kind == EventKind.ESCROW_LOCK:
            balances[payload['payer']] -= payload['amount']
            escrows[payload['escrow']] = payload['amount']
        elif event.kind == EventKind.ESCROW_RELEASE:
            for address, amount in payload['payouts']:
                balances[address] += amount
                pass
            escrows.pop(payload['escrow'])
            pass
        pass
    return balances, escrows


def fold_occupancy(events):
    """
    Stalls per lot after replaying `events`: how many are held by an open
    session, how many carry an observed plate and how many are free.
    """
    stall_counts = {}
    request_lots = {}
    provider_lots = {}
    held = {}
    seen = {}
    for event in events:
        payload = event.payload
        if event.kind == EventKind.LOT_CREATED:
            stall_counts[payload['lot']] = payload['stalls']
            provider_lots[payload['lot']] = payload['lot']
        elif event.kind == EventKind.TENANCY_REQUESTED:
            request_lots[payload['request']] = payload['lot']
        elif event.kind == EventKind.TENANCY_DECIDED and payload.get('approved'):
            provider_lots[payload['tenant_provider']] = request_lots[payload['request']]
        elif event.kind == EventKind.ESCROW_LOCK and 'channel_ref' in payload:
            held[payload['channel_ref']] = (provider_lots[payload['provider']], payload['stall'])
        elif event.kind == EventKind.ESCROW_RELEASE and 'channel_ref' in payload:
            held.pop(payload['channel_ref'], None)
        elif event.kind in OCCUPANCY_KINDS:
            seen[(payload['lot'], payload['stall'])] = payload.get('plate')
            pass
        pass

    lots = {}
    for lot, stalls in stall_counts.items():
        reserved = {stall for held_lot, stall in held.values() if held_lot == lot}
        occupied = {stall for (seen_lot, stall), plate in seen.items() if seen_lot == lot and plate}
        lots[lot] = {'stalls': stalls,
                     'reserved': len(reserved),
                     'occupied': len(occupied),
                     'free': stalls - len(reserved | occupied)}
        pass
    return lots


def session_transactions(events, escrow):
    """Transfer-class events that touched one channel's escrow."""
    return [event for event in events if event.kind in TRANSFER_KINDS and event.payload.get('escrow') == escrow]


def build_report(ledger, events):
    accounts = list(ledger.accounts.order_by('id').values_list('address', 'label', 'initial_balance'))
    labels = {address: label or address for address, label, _ in accounts}
    genesis = {address: initial for address, _, initial in accounts}
    balances, escrows = fold_balances(genesis, events)

    totals = dict.fromkeys(BREAKDOWN_FIELDS + ('rent', 'penalties', 'transfers'), 0)
    violations = {kind.value: 0 for kind in sorted(VIOLATION_KINDS)}
    channels = {}
    for event in events:
        payload = event.payload
        if event.kind == EventKind.ESCROW_LOCK and 'channel_ref' in payload:
            channels[payload['channel_ref']] = {'provider': payload.get('provider'),
                                                'car': payload.get('car'),
                                                'locked': payload['amount'],
                                                'outcome': 'open'}
        elif event.kind == EventKind.ESCROW_RELEASE and 'channel_ref' in payload:
            entry = channels.setdefault(payload['channel_ref'], {})
            entry['outcome'] = payload.get('outcome')
            for name in BREAKDOWN_FIELDS:
                entry[name] = payload.get(name, 0)
                totals[name] += entry[name]
                pass
        elif event.kind == EventKind.TRANSFER and 'contract' in payload:
            totals['rent'] += payload['rent']
            totals['penalties'] += payload['penalty']
        elif event.kind == EventKind.TRANSFER:
            totals['transfers'] += payload['amount']
        elif event.kind in VIOLATION_KINDS:
            violations[event.kind] += 1
            pass
        pass

    genesis_total = sum(genesis.values())
    escrow_total = sum(escrows.values())
    lots = fold_occupancy(events)
    return {
        'time': events[-1].time if events else 0,
        'event_count': len(events),
        'genesis_total': genesis_total,
        'balances': {labels[address]: balance for address, balance in balances.items()},
        'escrow': escrow_total,
        'channels': channels,
        'lots': lots,
        'free_stalls': sum(lot['free'] for lot in lots.values()),
        'totals': totals,
        'violations': violations,
        'conserved': sum(balances.values()) + escrow_total == genesis_total,
    }
