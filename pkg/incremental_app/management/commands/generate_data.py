from django.core.management.base import BaseCommand, CommandError
from pathlib import Path
import logging

from incremental_app.experiments import generate_data, load_config

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Genera blobs gaussianos y los guarda como archivos de características'

    def add_arguments(self, parser):
        parser.add_argument(
            '--spec',
            required=True,
            help='JSON con num_classes, dim, n_train_per_class, n_test_per_class, separation y seed'
        )
        parser.add_argument(
            '--out',
            required=True,
            help='Directorio destino de train.csv, test.csv y spec.json'
        )

    def handle(self, *args, **options):
        try:
            spec = load_config(Path(options['spec']))
            paths = generate_data(spec, options['out'])
        except (ValueError, OSError) as e:
            logger.error(f"Error generando datos: {e}", exc_info=True)
            raise CommandError(str(e))

        for path in paths:
            self.stdout.write(f"  ✓ {path}")
        self.stdout.write(self.style.SUCCESS(f"Datos generados en: {options['out']}"))
