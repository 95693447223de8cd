"""Configure Django before the detector test modules are collected."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'manifoldood.settings')
django.setup()
