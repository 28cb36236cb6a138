from django.core.management.base import BaseCommand, CommandError
from django.conf import settings
from pathlib import Path
import logging

from incremental_app.experiments import load_config, run_grid

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Corre una grilla métodos x sesiones x memoria x semillas en procesos paralelos'

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            required=True,
            help='JSON de grilla: methods, splits, capacities y seeds como listas'
        )
        parser.add_argument(
            '--workers',
            type=int,
            default=settings.CONTINUAL_LEARNING['GRID_WORKERS'],
            help='Procesos en paralelo (por defecto: GRID_WORKERS de settings)'
        )

    def handle(self, *args, **options):
        config_path = Path(options['config'])
        workers = options['workers']
        if workers < 1:
            raise CommandError(f"--workers debe ser >= 1, recibió {workers}")

        try:
            grid = load_config(config_path)
            result = run_grid(grid, workers=workers, base_dir=config_path.parent)
        except (ValueError, OSError) as e:
            logger.error(f"Error en la grilla {config_path}: {e}", exc_info=True)
            raise CommandError(str(e))

        self.stdout.write(result['table'].to_string(float_format=lambda v: f"{v:.4f}"))
        self.stdout.write(
            self.style.SUCCESS(
                f"\n✓ {len(result['reports'])} corridas; comparación en {result['output_dir']}"
            )
        )
