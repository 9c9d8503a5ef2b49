# wavft/urls.py - the only web surface is the admin, for browsing the run registry
# (training runs and evaluation records written by the manage.py commands)

from django.contrib import admin
from django.urls import path

urlpatterns = [
    # Admin interface - handles all /admin/ URLs
    path('admin/', admin.site.urls),
]
