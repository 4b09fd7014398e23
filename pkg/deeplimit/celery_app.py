# Celery app for ladder levels. Broker, backend and eager mode come from the CELERY_*
# Django settings; with CELERY_TASK_ALWAYS_EAGER (the default) levels run in-process.
import os
import logging
from celery import Celery
from celery.signals import task_postrun, task_failure, worker_process_init

logger = logging.getLogger("deeplimit.celery")

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "deeplimit_site.settings")

app = Celery("deeplimit")
app.config_from_object("django.conf:settings", namespace="CELERY")
app.conf.update(
    accept_content=["json"],
    task_serializer="json",
    result_serializer="json",
    broker_connection_retry_on_startup=True,
)
app.autodiscover_tasks(["deeplimit"])


@task_postrun.connect
def _on_level_done(task_id=None, task=None, retval=None, state=None, **_):
    if not isinstance(retval, dict) or "n" not in retval:
        return
    if retval.get("error"):
        logger.warning("Level n=%s failed after %.2fs: %s", retval["n"], retval.get("wall_time", 0.0), retval["error"])
    else:
        logger.info(
            "Level n=%s solved in %.2fs (iterations=%s converged=%s)",
            retval["n"], retval.get("wall_time", 0.0), retval.get("iterations"), retval.get("converged"),
        )


@task_failure.connect
def _on_level_crash(task_id=None, exception=None, args=None, **_):
    payload = args[0] if args else {}
    n = payload.get("n") if isinstance(payload, dict) else None
    logger.error("Level n=%s crashed in task %s: %s", n, task_id, exception)


@worker_process_init.connect
def _setup_django_in_worker(**_):
    import django

    django.setup()
