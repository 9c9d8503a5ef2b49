# Generated by Django 4.2.16 on 2026-10-18 12:00

import django.core.validators
from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="TrainingRun",
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
                ("output_dir", models.CharField(db_index=True, max_length=500)),
                (
                    "kind",
                    models.CharField(
                        choices=[
                            ("WAVFT", "Semi-supervised finetuning"),
                            ("BASELINE", "Labelled-only finetuning"),
                        ],
                        default="WAVFT",
                        max_length=10,
                    ),
                ),
                ("preset", models.CharField(default="desk", max_length=20)),
                ("config_digest", models.CharField(db_index=True, max_length=16)),
                ("config", models.JSONField(default=dict)),
                (
                    "alpha",
                    models.FloatField(
                        validators=[
                            django.core.validators.MinValueValidator(0.0),
                            django.core.validators.MaxValueValidator(1.0),
                        ]
                    ),
                ),
                (
                    "p",
                    models.FloatField(
                        validators=[
                            django.core.validators.MinValueValidator(0.0),
                            django.core.validators.MaxValueValidator(1.0),
                        ]
                    ),
                ),
                (
                    "beta",
                    models.FloatField(
                        blank=True,
                        null=True,
                        validators=[django.core.validators.MinValueValidator(0.0)],
                    ),
                ),
                ("seed_data", models.IntegerField(default=0)),
                (
                    "total_steps",
                    models.IntegerField(
                        validators=[django.core.validators.MinValueValidator(1)]
                    ),
                ),
                ("steps_completed", models.IntegerField(default=0)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("RUNNING", "Running"),
                            ("COMPLETED", "Completed"),
                            ("FAILED", "Failed"),
                        ],
                        default="RUNNING",
                        max_length=20,
                    ),
                ),
                ("final_checkpoint", models.CharField(blank=True, max_length=500)),
                ("final_combined_loss", models.FloatField(blank=True, null=True)),
                ("error", models.TextField(blank=True)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
            ],
            options={
                "ordering": ["-created_at"],
                "indexes": [
                    models.Index(
                        fields=["kind", "status"], name="core_run_kind_status_idx"
                    ),
                    models.Index(
                        fields=["alpha", "p"], name="core_run_alpha_p_idx"
                    ),
                ],
            },
        ),
        migrations.CreateModel(
            name="EvaluationRecord",
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
                ("checkpoint_id", models.CharField(db_index=True, max_length=16)),
                ("checkpoint_path", models.CharField(blank=True, max_length=500)),
                ("config_digest", models.CharField(db_index=True, max_length=16)),
                ("eval_digest", models.CharField(db_index=True, max_length=16)),
                (
                    "frame_accuracy",
                    models.FloatField(
                        validators=[
                            django.core.validators.MinValueValidator(0.0),
                            django.core.validators.MaxValueValidator(1.0),
                        ]
                    ),
                ),
                (
                    "num_frames",
                    models.IntegerField(
                        validators=[django.core.validators.MinValueValidator(1)]
                    ),
                ),
                ("per_class_accuracy", models.JSONField(blank=True, default=list)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                (
                    "training_run",
                    models.ForeignKey(
                        blank=True,
                        null=True,
                        on_delete=django.db.models.deletion.SET_NULL,
                        to="core.trainingrun",
                    ),
                ),
            ],
            options={
                "ordering": ["-created_at"],
                "unique_together": {("checkpoint_id", "eval_digest")},
            },
        ),
    ]
