# Admin: browse recorded runs with their manifests and timings.
from django.contrib import admin
from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    @admin.display(description="Config hash (short)")
    def short_hash(self, obj: ExperimentRun):
        return (obj.config_hash or "")[:12]

    list_display = (
        "id",
        "created_at",
        "command",
        "experiment",
        "seed",
        "status",
        "exit_code",
        "short_hash",
    )
    list_filter = ("command", "status", "created_at")
    search_fields = ("experiment", "config_hash", "output_dir", "error")
    ordering = ("-created_at",)
    readonly_fields = ("created_at", "updated_at", "manifest", "timings")
    fields = (
        ("command", "experiment"),
        ("seed", "config_hash"),
        "output_dir",
        ("status", "exit_code"),
        "error",
        "manifest",
        "timings",
        "created_at",
        "updated_at",
    )
