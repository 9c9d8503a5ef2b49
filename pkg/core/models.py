from django.db import models
from django.core.validators import MinValueValidator, MaxValueValidator


class TrainingRun(models.Model):
    """One finetuning run launched from the train or sweep commands"""
    STATUS_CHOICES = [
        ('RUNNING', 'Running'),
        ('COMPLETED', 'Completed'),
        ('FAILED', 'Failed'),
    ]

    KIND_CHOICES = [
        ('WAVFT', 'Semi-supervised finetuning'),
        ('BASELINE', 'Labelled-only finetuning'),
    ]

    # Identification
    output_dir = models.CharField(max_length=500, db_index=True)
    kind = models.CharField(max_length=10, choices=KIND_CHOICES, default='WAVFT')
    preset = models.CharField(max_length=20, default='desk')

    # Effective configuration
    config_digest = models.CharField(max_length=16, db_index=True)
    config = models.JSONField(default=dict)
    alpha = models.FloatField(validators=[MinValueValidator(0.0), MaxValueValidator(1.0)])
    p = models.FloatField(validators=[MinValueValidator(0.0), MaxValueValidator(1.0)])
    beta = models.FloatField(null=True, blank=True, validators=[MinValueValidator(0.0)])
    seed_data = models.IntegerField(default=0)

    # Progress
    total_steps = models.IntegerField(validators=[MinValueValidator(1)])
    steps_completed = models.IntegerField(default=0)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='RUNNING')
    final_checkpoint = models.CharField(max_length=500, blank=True)
    final_combined_loss = models.FloatField(null=True, blank=True)
    error = models.TextField(blank=True)

    # Tracking
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['kind', 'status'], name='core_run_kind_status_idx'),
            models.Index(fields=['alpha', 'p'], name='core_run_alpha_p_idx'),
        ]

    def __str__(self):
        return f"{self.get_kind_display()} alpha={self.alpha:g} p={self.p:g} ({self.config_digest})"

    @property
    def is_finished(self):
        return self.status != 'RUNNING'

    def mark_completed(self, steps, checkpoint, combined_loss=None):
        self.steps_completed = steps
        self.final_checkpoint = str(checkpoint)
        self.final_combined_loss = combined_loss
        self.status = 'COMPLETED'
        self.save()

    def mark_failed(self, error, steps=None):
        if steps is not None:
            self.steps_completed = steps
        self.error = str(error)
        self.status = 'FAILED'
        self.save()


class EvaluationRecord(models.Model):
    """Frame accuracy of one checkpoint on one eval set"""
    training_run = models.ForeignKey(TrainingRun, on_delete=models.SET_NULL, null=True, blank=True)

    checkpoint_id = models.CharField(max_length=16, db_index=True)
    checkpoint_path = models.CharField(max_length=500, blank=True)
    config_digest = models.CharField(max_length=16, db_index=True)
    eval_digest = models.CharField(max_length=16, db_index=True)

    frame_accuracy = models.FloatField(validators=[MinValueValidator(0.0), MaxValueValidator(1.0)])
    num_frames = models.IntegerField(validators=[MinValueValidator(1)])
    per_class_accuracy = models.JSONField(default=list, blank=True)

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']
        unique_together = ('checkpoint_id', 'eval_digest')

    def __str__(self):
        return f"{self.checkpoint_id} on {self.eval_digest}: {self.frame_accuracy:.4f}"

    @property
    def accuracy_percent(self):
        return round(100 * self.frame_accuracy, 2)
