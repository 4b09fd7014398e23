# Project URLConf: the admin is the only web surface (browsing recorded runs).
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]
