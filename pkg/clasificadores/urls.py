from django.urls import path, include

urlpatterns = [
    path('', include('incremental_app.urls', namespace='incremental_app')),
]
