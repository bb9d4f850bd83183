from fastapi import Depends

from lcmopg.config import get_settings
from lcmopg.services.runs import RunStore


def get_settings_dep():
    return get_settings()


def get_run_store(settings=Depends(get_settings_dep)) -> RunStore:
    return RunStore(settings.get_output_root_resolved())
