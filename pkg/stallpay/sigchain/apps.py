from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class SigchainConfig(AppConfig):
    name = 'sigchain'
    verbose_name = _('Voucher signatures')
    pass
