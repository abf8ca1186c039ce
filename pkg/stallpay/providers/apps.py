from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class ProvidersConfig(AppConfig):
    name = 'providers'
    verbose_name = _('Provider')
    verbose_name_plural = _('Providers')
    pass
