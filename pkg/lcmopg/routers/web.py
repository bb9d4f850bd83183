from pathlib import Path

from fastapi import APIRouter, Depends
from fastapi.responses import HTMLResponse
from jinja2 import Environment, FileSystemLoader, select_autoescape

from lcmopg.dependencies import get_run_store
from lcmopg.services.runs import RunStore

router = APIRouter()

_templates_dir = Path(__file__).resolve().parent.parent / "web" / "templates"
_env = Environment(loader=FileSystemLoader(str(_templates_dir)), autoescape=select_autoescape(["html"]))


@router.get("/", response_class=HTMLResponse)
async def index(store: RunStore = Depends(get_run_store)):
    template = _env.get_template("index.html")
    return template.render(runs=store.list_runs(), output_root=str(store.root))
