# incremental_app/middleware.py
import logging
import time

from django.conf import settings

logger = logging.getLogger(__name__)


class RequestLoggingMiddleware:
    """Tiempo de respuesta en X-Processing-Time; registra errores y requests lentos"""

    def __init__(self, get_response):
        self.get_response = get_response
        self.slow_seconds = settings.CONTINUAL_LEARNING.get('SLOW_REQUEST_SECONDS', 5)

    def __call__(self, request):
        start_time = time.time()

        response = self.get_response(request)

        processing_time = time.time() - start_time
        response['X-Processing-Time'] = f"{processing_time:.3f}s"

        if response.status_code >= 400:
            logger.warning(f"Respuesta {response.status_code} para {request.path}")

        if processing_time > self.slow_seconds:
            logger.warning(
                f"Request lento: {request.path} - {processing_time:.2f}s "
                f"desde {request.META.get('REMOTE_ADDR', 'unknown')}"
            )

        return response
