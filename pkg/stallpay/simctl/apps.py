from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class SimctlConfig(AppConfig):
    name = 'simctl'
    verbose_name = _('Simulation')
    verbose_name_plural = _('Simulations')
    pass
