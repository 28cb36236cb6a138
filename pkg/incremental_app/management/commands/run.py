from django.core.management.base import BaseCommand, CommandError
from pathlib import Path
import logging

from incremental_app.experiments import (
    ExperimentConfig, load_config, remove_partial_outputs, run_experiment,
)

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Corre un experimento incremental a partir de un archivo de configuración JSON'

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            required=True,
            help='Archivo JSON con método, datos, sesiones, memoria y semilla'
        )
        parser.add_argument(
            '--output-dir',
            help='Directorio de salida (reemplaza output_dir de la configuración)'
        )

    def handle(self, *args, **options):
        config_path = Path(options['config'])
        out_dir = None
        pre_existing = True
        try:
            data = load_config(config_path)
            if options.get('output_dir'):
                data['output_dir'] = str(Path(options['output_dir']).resolve())
            config = ExperimentConfig.from_dict(data, base_dir=config_path.parent)
            out_dir = config.resolve_output_dir()
            pre_existing = out_dir.exists()

            self.stdout.write(
                f"Corriendo {config.method}: {config.num_splits} sesiones, "
                f"memoria {config.memory_capacity}, semilla {config.seed}"
            )
            result = run_experiment(config)

        except (ValueError, OSError) as e:
            logger.error(f"Error en la corrida de {config_path}: {e}", exc_info=True)
            if out_dir is not None and not pre_existing and out_dir.exists():
                remove_partial_outputs(out_dir, remove_dir=True)
            raise CommandError(str(e))

        report = result['report']
        for session in report['sessions']:
            self.stdout.write(
                f"  Sesión {session['index']}: {session['seen_classes']} clases vistas, "
                f"exactitud {session['seen_accuracy']:.4f}"
            )
        self.stdout.write(
            self.style.SUCCESS(
                f"✓ Corrida terminada: exactitud final {report['final_seen_accuracy']:.4f} "
                f"en {result['output_dir']}"
            )
        )


# Para usar este comando:
# python manage.py run --config configs/blobs_ours.json
