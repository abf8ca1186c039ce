import logging

logger = logging.getLogger('stallpay')
