from django.contrib import admin
from .models import ExperimentRun, ImageResult


class ImageResultInline(admin.TabularInline):
    model = ImageResult
    extra = 0
    fields = ('sample_id', 'dataset', 'e', 'f1', 'tp', 'fp', 'tn', 'fn')
    readonly_fields = fields
    can_delete = False


class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('model', 'scope', 'seed', 'iterations', 'use_roi_stage', 'mean_e', 'mean_f1', 'created_at')
    list_filter = ('model', 'use_roi_stage', 'created_at')
    search_fields = ('scope', 'output_dir')
    date_hierarchy = 'created_at'
    ordering = ('-created_at',)
    inlines = [ImageResultInline]


class ImageResultAdmin(admin.ModelAdmin):
    list_display = ('sample_id', 'dataset', 'e', 'f1', 'run_scope')
    list_filter = ('dataset', 'run__model')
    search_fields = ('sample_id', 'run__scope')
    ordering = ('sample_id',)

    def run_scope(self, obj):
        return obj.run.scope

    run_scope.short_description = 'Run Scope'
    run_scope.admin_order_field = 'run__scope'


admin.site.register(ExperimentRun, ExperimentRunAdmin)
admin.site.register(ImageResult, ImageResultAdmin)
