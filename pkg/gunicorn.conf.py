# gunicorn.conf.py - Servidor de la API de reportes (sólo lectura)
import os

# === SERVIDOR ===
bind = f"0.0.0.0:{os.environ.get('PORT', 10000)}"
workers = int(os.environ.get('WEB_CONCURRENCY', 2))
worker_class = "sync"
timeout = 30
keepalive = 2

# Los reportes son archivos pequeños; reciclar workers de vez en cuando
max_requests = 500
max_requests_jitter = 50

preload_app = True


def post_fork(server, worker):
    worker.log.info("Worker spawned (pid: %s)", worker.pid)


# === CONFIGURACIÓN DE DJANGO ===
wsgi_app = "clasificadores.wsgi:application"
pythonpath = "."

# === LOGGING ===
accesslog = "-"
errorlog = "-"
loglevel = os.environ.get('CIL_LOG_LEVEL', 'warning').lower()
access_log_format = '%(h)s "%(r)s" %(s)s %(b)s %(D)s'
