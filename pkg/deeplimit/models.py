from __future__ import annotations

from django.db import models


class ExperimentRun(models.Model):
    """
    One CLI invocation: the command, the config it resolved to and the
    manifest it wrote. Rows are bookkeeping only; the files on disk are the results.
    """
    STATUS_SUCCEEDED = "succeeded"
    STATUS_FAILED = "failed"
    STATUS_CHOICES = [(STATUS_SUCCEEDED, "Succeeded"), (STATUS_FAILED, "Failed")]

    # Audit
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    command = models.CharField(max_length=32)
    experiment = models.CharField(max_length=128, blank=True, default="")
    config_hash = models.CharField(max_length=64, blank=True, default="")
    seed = models.CharField(max_length=20, blank=True, default="")  # u64 does not fit a signed bigint
    output_dir = models.CharField(max_length=512, blank=True, default="")
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default=STATUS_SUCCEEDED)
    exit_code = models.IntegerField(default=0)
    error = models.TextField(blank=True, default="")

    manifest = models.JSONField(null=True, blank=True)
    timings = models.JSONField(null=True, blank=True)

    class Meta:
        ordering = ["-created_at", "-id"]
        db_table = "deeplimit_experiment_run"
        indexes = [
            models.Index(fields=["command"], name="deeplimit_run_command_idx"),
            models.Index(fields=["config_hash"], name="deeplimit_run_hash_idx"),
            models.Index(fields=["created_at"], name="deeplimit_run_created_idx"),
        ]

    def __str__(self) -> str:
        ts = self.created_at.strftime("%Y-%m-%d %H:%M:%S") if self.created_at else "N/A"
        return f"ExperimentRun#{self.pk} {self.command} [{self.status}] @ {ts}"
