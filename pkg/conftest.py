"""Configure Django before pytest collects the simulator test modules."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'tumour_sim.settings')
django.setup()
