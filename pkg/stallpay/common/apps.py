from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class CommonConfig(AppConfig):
    # Shared arithmetic, refs and engine errors. No models.
    name = 'common'
    verbose_name = _("Stallpay common")
    pass
