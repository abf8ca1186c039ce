from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class RegistryConfig(AppConfig):
    name = 'registry'
    verbose_name = _('Registry')
    verbose_name_plural = _('Registries')
    pass
