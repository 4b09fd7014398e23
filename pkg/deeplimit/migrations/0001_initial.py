# Generated by Django 5.2.7 on 2026-10-19 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
                ("command", models.CharField(max_length=32)),
                ("experiment", models.CharField(blank=True, default="", max_length=128)),
                ("config_hash", models.CharField(blank=True, default="", max_length=64)),
                ("seed", models.CharField(blank=True, default="", max_length=20)),
                ("output_dir", models.CharField(blank=True, default="", max_length=512)),
                (
                    "status",
                    models.CharField(
                        choices=[("succeeded", "Succeeded"), ("failed", "Failed")],
                        default="succeeded",
                        max_length=16,
                    ),
                ),
                ("exit_code", models.IntegerField(default=0)),
                ("error", models.TextField(blank=True, default="")),
                ("manifest", models.JSONField(blank=True, null=True)),
                ("timings", models.JSONField(blank=True, null=True)),
            ],
            options={
                "db_table": "deeplimit_experiment_run",
                "ordering": ["-created_at", "-id"],
                "indexes": [
                    models.Index(fields=["command"], name="deeplimit_run_command_idx"),
                    models.Index(fields=["config_hash"], name="deeplimit_run_hash_idx"),
                    models.Index(fields=["created_at"], name="deeplimit_run_created_idx"),
                ],
            },
        ),
    ]
