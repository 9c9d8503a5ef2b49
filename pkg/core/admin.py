from django.contrib import admin
from .models import TrainingRun, EvaluationRecord


# 1. Training Run Admin
@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ('config_digest', 'kind', 'preset', 'alpha', 'p', 'beta', 'status',
                    'steps_completed', 'evaluation_count', 'created_at')
    list_filter = ('kind', 'status', 'preset')
    search_fields = ('config_digest', 'output_dir')
    ordering = ('-created_at',)
    readonly_fields = ('config', 'created_at', 'updated_at')

    fieldsets = (
        ('Run', {
            'fields': ('output_dir', 'kind', 'preset', 'status', 'error')
        }),
        ('Configuration', {
            'fields': ('config_digest', 'alpha', 'p', 'beta', 'seed_data', 'config')
        }),
        ('Progress', {
            'fields': ('total_steps', 'steps_completed', 'final_checkpoint', 'final_combined_loss')
        }),
        ('Metadata', {
            'fields': ('created_at', 'updated_at'),
            'classes': ('collapse',)
        }),
    )

    def evaluation_count(self, obj):
        return obj.evaluationrecord_set.count()

    evaluation_count.short_description = 'Evaluations'


# 2. Evaluation Record Admin
@admin.register(EvaluationRecord)
class EvaluationRecordAdmin(admin.ModelAdmin):
    list_display = ('checkpoint_id', 'eval_digest', 'accuracy_display', 'num_frames', 'training_run', 'created_at')
    list_filter = ('eval_digest',)
    search_fields = ('checkpoint_id', 'config_digest', 'checkpoint_path')
    ordering = ('-created_at',)
    raw_id_fields = ('training_run',)

    def accuracy_display(self, obj):
        return f"{obj.accuracy_percent:.2f}%"

    accuracy_display.short_description = 'Frame accuracy'
