"""
WSGI config for the wavft project.

Only used by `manage.py runserver` to serve the admin over the run registry.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "wavft.settings")

application = get_wsgi_application()
