# Generated by Django 5.1 on 2026-10-19 09:12

import django.db.models.deletion
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False, verbose_name='ID')),
                ('model', models.CharField(choices=[('fcn', 'FCN'), ('gan', 'Conditional GAN')], db_index=True, max_length=8)),
                ('scope', models.CharField(db_index=True, max_length=255)),
                ('seed', models.IntegerField()),
                ('iterations', models.IntegerField()),
                ('use_roi_stage', models.BooleanField(default=False)),
                ('output_dir', models.CharField(max_length=1024)),
                ('n_train', models.IntegerField(default=0)),
                ('n_test', models.IntegerField(default=0)),
                ('mean_e', models.FloatField()),
                ('std_e', models.FloatField()),
                ('mean_f1', models.FloatField()),
                ('std_f1', models.FloatField()),
                ('created_at', models.DateTimeField(auto_now_add=True, db_index=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['model', 'scope'], name='pipeline_ex_model_scope_idx'), models.Index(fields=['created_at', 'updated_at'], name='pipeline_ex_created_idx')],
            },
        ),
        migrations.CreateModel(
            name='ImageResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('sample_id', models.CharField(db_index=True, max_length=255)),
                ('dataset', models.CharField(blank=True, db_index=True, max_length=255)),
                ('tp', models.BigIntegerField()),
                ('fp', models.BigIntegerField()),
                ('tn', models.BigIntegerField()),
                ('fn', models.BigIntegerField()),
                ('e', models.FloatField()),
                ('precision', models.FloatField(blank=True, null=True)),
                ('recall', models.FloatField(blank=True, null=True)),
                ('f1', models.FloatField(blank=True, null=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='results', to='pipeline.experimentrun')),
            ],
            options={
                'ordering': ['sample_id'],
                'indexes': [models.Index(fields=['run', 'dataset'], name='pipeline_im_run_dataset_idx')],
                'constraints': [models.UniqueConstraint(fields=('run', 'sample_id'), name='pipeline_unique_run_sample')],
            },
        ),
    ]
