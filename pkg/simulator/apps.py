from django.apps import AppConfig


class SimulatorConfig(AppConfig):
    name = 'simulator'
    verbose_name = 'SAV finite-element tumour growth simulator'
