from django.urls import path
from . import views

app_name = 'incremental_app'

urlpatterns = [
    path('status/', views.status, name='status'),
    path('reports/', views.report_list, name='report_list'),
    path('reports/<str:run_name>/', views.report_detail, name='report_detail'),
    path('reports/<str:run_name>/curves/', views.report_curves, name='report_curves'),
]
