"""
Scenario file schema and the JSON shapes the runner writes out.
"""
from rest_framework import serializers
from rest_framework.renderers import JSONRenderer
from rest_framework.settings import api_settings

from sigchain.signing import Voucher
from stallpay.constant import BASIS_POINTS, GRACE_PERIOD, MAX_FUNDS, MAX_STALLS, MAX_TIME, SCENARIO_VERSION, WEEK_HOURS


ROLES = ('administrator', 'landlord', 'tenant', 'driver', 'service_provider', 'observer')


#
# Fields
#
class RefField(serializers.RegexField):
    """`<kind>:<n>` reference to an entity created earlier in the run."""

    def __init__(self, *kinds, **kwargs):
        self.kinds = kinds
        kwargs.setdefault('error_messages', {'invalid': 'expected a {} ref like {}:1'.format(' or '.join(kinds), kinds[0])})
        super().__init__(r'^({}):[1-9][0-9]*$'.format('|'.join(kinds)), **kwargs)
        pass

    pass


class ActorField(serializers.CharField):
    # Checked against the scenario's genesis by ScenarioSerializer.
    pass


class VoucherField(serializers.CharField):
    """Hex wire form of a voucher."""

    def to_internal_value(self, data):
        text = super().to_internal_value(data)
        try:
            return Voucher.from_hex(text)
        except ValueError as exc:
            raise serializers.ValidationError('malformed voucher: {}'.format(exc))

    pass


def funds(**kwargs):
    return serializers.IntegerField(min_value=0, max_value=MAX_FUNDS, **kwargs)


def basis_points(**kwargs):
    return serializers.IntegerField(min_value=0, max_value=BASIS_POINTS, **kwargs)


def time_point(**kwargs):
    return serializers.IntegerField(min_value=0, max_value=MAX_TIME, **kwargs)


#
# Action arguments, one serializer per action
#
class ArgsSerializer(serializers.Serializer):

    def validate(self, attrs):
        unknown = sorted(set(self.initial_data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError('unknown arguments: {}'.format(', '.join(unknown)))
        return attrs

    pass


class TransferArgs(ArgsSerializer):
    to = ActorField()
    amount = funds()
    pass


class RequestLandlordRegistrationArgs(ArgsSerializer):
    tax_rate = basis_points()
    land_info = serializers.CharField(max_length=200, allow_blank=True, default='')
    valid_from = time_point(default=0)
    valid_until = time_point(default=None, allow_null=True)
    pass


class DecideRegistrationArgs(ArgsSerializer):
    request = RefField('request')
    approve = serializers.BooleanField()
    pass


class RevokeLandlordContractArgs(ArgsSerializer):
    contract = RefField('landlord_contract')
    pass


class RegisterCarArgs(ArgsSerializer):
    # Emptiness is the registry's call.
    plate = serializers.CharField(max_length=40, allow_blank=True, trim_whitespace=False)
    pass


class ProposeAmendmentArgs(ArgsSerializer):
    contract = RefField('landlord_contract', 'renting_contract')
    changes = serializers.DictField()
    pass


class ResolveAmendmentArgs(ArgsSerializer):
    amendment = RefField('amendment')
    accept = serializers.BooleanField()
    pass


class DefinePolicyArgs(ArgsSerializer):
    rates = serializers.ListField(child=funds(), required=False)
    rate = funds(required=False)
    hour_offset = serializers.IntegerField(default=0, min_value=0, max_value=WEEK_HOURS - 1)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        if ('rates' in attrs) == ('rate' in attrs):
            raise serializers.ValidationError('give either a 168-entry `rates` grid or a uniform `rate`')
        return attrs

    pass


class CreateParkingLotArgs(ArgsSerializer):
    landlord_contract = RefField('landlord_contract')
    stalls = serializers.IntegerField(max_value=MAX_STALLS)
    policy = RefField('policy')
    location = serializers.CharField(max_length=200, allow_blank=True, default='')
    pass


class RequestTenancyArgs(ArgsSerializer):
    lot = RefField('lot')
    stalls = serializers.ListField(child=serializers.IntegerField(min_value=0))
    rent_fee = funds()
    period = serializers.IntegerField(max_value=MAX_TIME)
    landlord_share = basis_points(default=0)
    penalty_rate = basis_points(default=0)
    policy = RefField('policy', default=None, allow_null=True)
    pass


class TenancyRequestArgs(ArgsSerializer):
    request = RefField('tenancy_request')
    pass


class RentingContractArgs(ArgsSerializer):
    contract = RefField('renting_contract')
    pass


class SetPaymentPolicyArgs(ArgsSerializer):
    provider = RefField('lot', 'tenant')
    policy = RefField('policy')
    pass


class RegisterServiceProviderArgs(ArgsSerializer):
    provider = RefField('lot', 'tenant')
    account = ActorField()
    share = basis_points()
    pass


class ObserveOccupancyArgs(ArgsSerializer):
    lot = RefField('lot')
    stall = serializers.IntegerField(min_value=0)
    plate = serializers.CharField(max_length=40, default=None, allow_null=True, allow_blank=True)
    pass


class StartParkingArgs(ArgsSerializer):
    car = RefField('car')
    provider = RefField('lot', 'tenant')
    stall = serializers.IntegerField(min_value=0)
    until = time_point()
    deposit = funds()
    sp = RefField('sp', default=None, allow_null=True)
    pass


class ChannelArgs(ArgsSerializer):
    channel = RefField('channel')
    pass


class ChannelVoucherArgs(ChannelArgs):
    voucher = VoucherField(default=None, allow_null=True)
    pass


ACTIONS = {
    'transfer': TransferArgs,
    'request_landlord_registration': RequestLandlordRegistrationArgs,
    'decide_registration': DecideRegistrationArgs,
    'revoke_landlord_contract': RevokeLandlordContractArgs,
    'register_car': RegisterCarArgs,
    'propose_amendment': ProposeAmendmentArgs,
    'resolve_amendment': ResolveAmendmentArgs,
    'define_policy': DefinePolicyArgs,
    'create_parking_lot': CreateParkingLotArgs,
    'request_tenancy': RequestTenancyArgs,
    'approve_tenancy': TenancyRequestArgs,
    'reject_tenancy': TenancyRequestArgs,
    'pay_rent': RentingContractArgs,
    'terminate_tenancy': RentingContractArgs,
    'set_payment_policy': SetPaymentPolicyArgs,
    'register_service_provider': RegisterServiceProviderArgs,
    'observe_occupancy': ObserveOccupancyArgs,
    'start_parking': StartParkingArgs,
    'emit_voucher': ChannelArgs,
    'accept_voucher': ChannelVoucherArgs,
    'settle_channel': ChannelVoucherArgs,
    'timeout_refund': ChannelArgs,
}


def actor_arguments(action):
    return [name for name, field in ACTIONS[action]().fields.items() if isinstance(field, ActorField)]


#
# Scenario
#
class GenesisEntrySerializer(serializers.Serializer):
    actor = serializers.CharField(max_length=100)
    role = serializers.ChoiceField(choices=ROLES)
    balance = funds(default=0)
    pass


class StepSerializer(serializers.Serializer):
    at = time_point()
    actor = serializers.CharField(max_length=100)
    action = serializers.CharField()
    args = serializers.DictField(default=dict)

    def validate_action(self, value):
        if value not in ACTIONS:
            raise serializers.ValidationError('unknown action {!r}'.format(value))
        return value

    def validate(self, attrs):
        arguments = ACTIONS[attrs['action']](data=attrs['args'])
        if not arguments.is_valid():
            raise serializers.ValidationError({'args': arguments.errors})
        attrs['args'] = dict(arguments.validated_data)
        return attrs

    pass


class ScenarioSerializer(serializers.Serializer):
    version = serializers.IntegerField()
    seed = serializers.IntegerField(min_value=0, default=0)
    grace = time_point(default=GRACE_PERIOD)
    genesis = GenesisEntrySerializer(many=True, allow_empty=False)
    steps = StepSerializer(many=True, required=False)

    def validate_version(self, value):
        if value != SCENARIO_VERSION:
            raise serializers.ValidationError('unsupported version {}'.format(value))
        return value

    def validate(self, attrs):
        attrs.setdefault('steps', [])
        errors = []
        actors = [entry['actor'] for entry in attrs['genesis']]
        duplicates = sorted({actor for actor in actors if actors.count(actor) > 1})
        if duplicates:
            errors.append('duplicate actors: {}'.format(', '.join(duplicates)))
        administrators = [entry['actor'] for entry in attrs['genesis'] if entry['role'] == 'administrator']
        if len(administrators) != 1:
            errors.append('exactly one administrator is required, found {}'.format(len(administrators)))

        previous = 0
        for index, step in enumerate(attrs['steps']):
            if step['at'] < previous:
                errors.append('step {}: at {} is before the previous step at {}'.format(index, step['at'], previous))
            previous = max(previous, step['at'])
            if step['actor'] not in actors:
                errors.append('step {}: undeclared actor {!r}'.format(index, step['actor']))
            for name in actor_arguments(step['action']):
                if step['args'][name] not in actors:
                    errors.append('step {}: {} names undeclared actor {!r}'.format(index, name, step['args'][name]))
                pass
            pass
        if errors:
            raise serializers.ValidationError(errors)
        return attrs

    pass


def _render_path(path):
    parts = []
    for key in path:
        if isinstance(key, int) and parts and parts[-1] == 'steps':
            parts[-1] = 'step {}'.format(key)
        elif isinstance(key, int):
            parts.append('[{}]'.format(key))
        else:
            parts.append(str(key))
            pass
        pass
    return '.'.join(parts)


def flatten_errors(detail, path=()):
    """Turn nested DRF errors into one human-readable line per problem."""
    if isinstance(detail, dict):
        lines = []
        for key, value in detail.items():
            lines.extend(flatten_errors(value, path if key == api_settings.NON_FIELD_ERRORS_KEY else path + (key,)))
            pass
        return lines
    if isinstance(detail, list):
        lines = []
        for index, item in enumerate(detail):
            if isinstance(item, (dict, list)):
                lines.extend(flatten_errors(item, path + (index,)))
            else:
                lines.extend(flatten_errors(item, path))
                pass
            pass
        return lines
    return ['{}: {}'.format(_render_path(path), detail) if path else str(detail)]


#
# Output
#
class EventRecordSerializer(serializers.Serializer):
    index = serializers.IntegerField()
    time = serializers.IntegerField()
    kind = serializers.CharField()
    payload = serializers.SerializerMethodField()

    def get_payload(self, record):
        return dict(record.payload)

    pass


def render_json(data):
    return JSONRenderer().render(data)


def render_jsonl(rows):
    return b''.join(render_json(row) + b'\n' for row in rows)


def render_events(records):
    return render_jsonl(EventRecordSerializer(records, many=True).data)
