# incremental_app/forms.py
from django import forms

METHOD_CHOICES = [
    ('ours', 'Clasificadores parciales + BiC'),
    ('ours_no_bic', 'Clasificadores parciales sin BiC'),
    ('ours_no_freeze', 'Clasificadores parciales sin congelar'),
    ('er', 'ER con BiC'),
    ('gdumb', 'GDumb'),
]

LR_SCHEDULE_CHOICES = [
    ('plateau', 'Decaimiento en meseta'),
    ('exponential', 'Decaimiento exponencial'),
]

MAX_SEED = 2 ** 64 - 1


class ExperimentConfigForm(forms.Form):
    method = forms.ChoiceField(
        label='Método',
        choices=METHOD_CHOICES,
    )

    num_splits = forms.IntegerField(
        label='Sesiones',
        help_text='Cantidad de grupos de clases (ej: 5, 10, 20)',
        min_value=1,
    )

    memory_capacity = forms.IntegerField(
        label='Capacidad de memoria',
        help_text='B: ejemplos guardados entre sesiones (train + val)',
        min_value=1,
    )

    seed = forms.IntegerField(
        label='Semilla maestra',
        min_value=0,
        max_value=MAX_SEED,
    )

    output_dir = forms.CharField(
        label='Directorio de salida',
        required=False,
        max_length=500,
    )

    train_file = forms.CharField(
        label='Archivo de entrenamiento',
        required=False,
        max_length=500,
    )

    test_file = forms.CharField(
        label='Archivo de prueba',
        required=False,
        max_length=500,
    )

    baseline_hidden_width = forms.IntegerField(
        label='Ancho de la cabeza única',
        help_text='Por defecto, paridad de parámetros con el banco',
        required=False,
        min_value=1,
    )

    def __init__(self, *args, has_blobs=False, **kwargs):
        super().__init__(*args, **kwargs)
        self.has_blobs = has_blobs

    def clean_output_dir(self):
        output_dir = self.cleaned_data.get('output_dir') or ''
        if '\x00' in output_dir:
            raise forms.ValidationError("Ruta inválida")
        return output_dir.strip()

    def clean(self):
        """Exactamente una fuente de datos: blobs o par de archivos"""
        cleaned_data = super().clean()

        train_file = cleaned_data.get('train_file')
        test_file = cleaned_data.get('test_file')

        if bool(train_file) != bool(test_file):
            raise forms.ValidationError(
                "train_file y test_file van juntos: indique ambos o ninguno"
            )
        has_files = bool(train_file and test_file)
        if has_files and self.has_blobs:
            raise forms.ValidationError(
                "Indique una sola fuente de datos: 'blobs' o los archivos de características"
            )
        if not has_files and not self.has_blobs:
            raise forms.ValidationError(
                "Falta la fuente de datos: 'blobs' o train_file/test_file"
            )

        return cleaned_data


class BlobSpecForm(forms.Form):
    num_classes = forms.IntegerField(min_value=1)
    dim = forms.IntegerField(min_value=2)
    n_train_per_class = forms.IntegerField(min_value=1)
    n_test_per_class = forms.IntegerField(min_value=1)
    separation = forms.FloatField()
    seed = forms.IntegerField(
        required=False,
        min_value=0,
        max_value=MAX_SEED,
        help_text='Si falta, se deriva de la semilla maestra',
    )

    def clean_separation(self):
        separation = self.cleaned_data.get('separation')
        if separation is not None and not separation > 0:
            raise forms.ValidationError("La separación debe ser mayor que 0")
        return separation


class SessionOverridesForm(forms.Form):
    lr0 = forms.FloatField(required=False)
    stop_patience = forms.IntegerField(required=False, min_value=1)
    lr_patience = forms.IntegerField(required=False, min_value=1)
    lr_decay_factor = forms.FloatField(required=False)
    batch_size = forms.IntegerField(required=False, min_value=2)
    max_epochs = forms.IntegerField(required=False, min_value=1)
    hidden_width = forms.IntegerField(required=False, min_value=1)
    val_fraction = forms.FloatField(required=False)
    bic_epochs = forms.IntegerField(required=False, min_value=0)
    bic_lr = forms.FloatField(required=False)
    lr_schedule = forms.ChoiceField(required=False, choices=LR_SCHEDULE_CHOICES)
    exp_decay_rate = forms.FloatField(required=False)
    use_activation = forms.NullBooleanField(required=False)

    def clean_batch_size(self):
        batch_size = self.cleaned_data.get('batch_size')
        if batch_size is not None and batch_size % 2:
            raise forms.ValidationError("batch_size debe ser par (mitad actual, mitad memoria)")
        return batch_size

    def clean_lr0(self):
        lr0 = self.cleaned_data.get('lr0')
        if lr0 is not None and not lr0 > 0:
            raise forms.ValidationError("lr0 debe ser mayor que 0")
        return lr0

    def overrides(self):
        """Sólo los campos presentes en los datos"""
        return {
            name: value for name, value in self.cleaned_data.items()
            if name in self.data and value not in (None, '')
        }
