from fastapi import APIRouter, Depends, File, Form, HTTPException, UploadFile, status
from fastapi.responses import FileResponse

from lcmopg import logger
from lcmopg.dependencies import get_run_store
from lcmopg.errors import ContractViolation
from lcmopg.objective_space import hypervolume
from lcmopg.services.runs import RunStore, parse_points_csv

router = APIRouter()

MAX_CSV_BYTES = 16 * 1024 * 1024


@router.get("/runs")
async def list_runs(store: RunStore = Depends(get_run_store)):
    return {"runs": store.list_runs()}


@router.get("/runs/{run}")
async def get_run(run: str, store: RunStore = Depends(get_run_store)):
    try:
        record = store.read_record(run)
    except (ValueError, FileNotFoundError):
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="Run not found")
    return record.model_dump(mode="json")


@router.get("/runs/{run}/files")
async def list_run_files(run: str, store: RunStore = Depends(get_run_store)):
    try:
        return {"files": store.list_files(run)}
    except (ValueError, FileNotFoundError):
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="Run not found")


@router.get("/runs/{run}/files/{path:path}")
async def download_run_file(run: str, path: str, store: RunStore = Depends(get_run_store)):
    try:
        file_path = store.get_file_path(run, path)
    except (ValueError, FileNotFoundError):
        logger.info("Download: %s/%s not found", run, path)
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="File not found")
    return FileResponse(
        path=file_path,
        filename=file_path.name,
        media_type="application/octet-stream",
    )


@router.post("/hv")
async def compute_hypervolume(
    file: UploadFile = File(...),
    ref: str = Form(..., description="comma-separated reference point"),
):
    """Exact hypervolume of an uploaded point CSV (a pareto_front.csv or bare rows)."""
    data = await file.read(MAX_CSV_BYTES + 1)
    if len(data) > MAX_CSV_BYTES:
        raise HTTPException(status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE, detail="CSV too large")
    try:
        ref_point = [float(v) for v in ref.split(",")]
        points = parse_points_csv(data.decode("utf-8"), len(ref_point))
        hv = hypervolume(points, ref_point)
    except (ContractViolation, ValueError, UnicodeDecodeError) as e:
        logger.info("HV request rejected: %s", e)
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return {"hypervolume": hv, "points": int(points.shape[0]), "ref": ref_point}
