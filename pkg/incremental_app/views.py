from django.http import HttpResponse, Http404, JsonResponse
from django.conf import settings
from django.views.decorators.http import require_GET
from pathlib import Path
import json
import os
import logging

logger = logging.getLogger(__name__)

FORBIDDEN_CHARS = ['/', '\\', '<', '>', ':', '"', '|', '?', '*', '\x00']


def _reports_root():
    return Path(settings.CONTINUAL_LEARNING['REPORTS_ROOT'])


def _is_safe_run_name(run_name):
    """Verifica que el nombre de corrida no salga del directorio de reportes"""
    if not run_name or len(run_name) > 255:
        return False
    if '..' in run_name or run_name.startswith('.'):
        return False
    return not any(c in run_name for c in FORBIDDEN_CHARS)


def _run_file(run_name, filename):
    if not _is_safe_run_name(run_name):
        logger.warning(f"Nombre de corrida no seguro o inválido: {run_name}")
        raise Http404("Corrida no válida")
    file_path = _reports_root() / run_name / filename
    if not file_path.exists():
        logger.info(f"Archivo no encontrado: {file_path}")
        raise Http404("Corrida no encontrada")
    return file_path


@require_GET
def status(request):
    """Estado del directorio de reportes"""
    root = _reports_root()
    try:
        runs = [p for p in root.iterdir() if (p / 'report.json').exists()] if root.exists() else []
        data = {
            'reports_root_exists': root.exists(),
            'reports_root_writable': root.exists() and os.access(root, os.W_OK),
            'runs_count': len(runs),
        }
        data['healthy'] = data['reports_root_writable'] or not root.exists()
        return JsonResponse(data)
    except OSError as e:
        logger.error(f"Error verificando estado: {e}")
        return JsonResponse({'healthy': False, 'error': str(e)}, status=500)


@require_GET
def report_list(request):
    """Corridas disponibles con su exactitud final"""
    root = _reports_root()
    runs = []
    if root.exists():
        for report_path in sorted(root.glob('*/report.json')):
            try:
                report = json.loads(report_path.read_text(encoding='utf-8'))
            except (OSError, json.JSONDecodeError) as e:
                logger.warning(f"Reporte ilegible {report_path}: {e}")
                continue
            runs.append({
                'run': report_path.parent.name,
                'method': report.get('method'),
                'num_splits': report.get('num_splits'),
                'memory_capacity': report.get('memory_capacity'),
                'seed': report.get('seed'),
                'final_seen_accuracy': report.get('final_seen_accuracy'),
            })
    return JsonResponse({'runs': runs})


@require_GET
def report_detail(request, run_name):
    file_path = _run_file(run_name, 'report.json')
    return HttpResponse(file_path.read_bytes(), content_type='application/json')


@require_GET
def report_curves(request, run_name):
    """Descarga curves.csv de una corrida"""
    file_path = _run_file(run_name, 'curves.csv')
    response = HttpResponse(file_path.read_bytes(), content_type='text/csv')
    response['Content-Disposition'] = f'attachment; filename="{run_name}_curves.csv"'
    response['Content-Length'] = file_path.stat().st_size
    return response
