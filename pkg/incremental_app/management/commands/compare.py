from django.core.management.base import BaseCommand, CommandError
import logging

from incremental_app.experiments import compare

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Compara reportes: exactitud final por método y celda (sesiones, memoria)'

    def add_arguments(self, parser):
        parser.add_argument(
            'reports',
            nargs='+',
            help='Archivos report.json o directorios de corridas'
        )
        parser.add_argument(
            '--out',
            help='Directorio donde escribir comparison.csv y merged_curves.csv'
        )

    def handle(self, *args, **options):
        try:
            table, curves = compare(options['reports'], out_dir=options.get('out'))
        except (ValueError, OSError) as e:
            logger.error(f"Error comparando reportes: {e}", exc_info=True)
            raise CommandError(str(e))

        self.stdout.write(table.to_string(float_format=lambda v: f"{v:.4f}"))
        if options.get('out'):
            self.stdout.write(
                self.style.SUCCESS(
                    f"\n✓ {len(table)} método(s), {len(curves)} puntos de curva en {options['out']}"
                )
            )
