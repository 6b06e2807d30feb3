from fastapi import FastAPI, HTTPException, Query, Path
from typing import List
from api import crud, schemas
from api.storage import InvalidRunName
from meshfree.config import LOG_LEVEL
from meshfree.schemas import IterationRecord
import logging

logging.basicConfig(level=LOG_LEVEL,
                    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

app = FastAPI(
    title="Mesh-free hp-Adaptive Results API",
    description="Read-only browsing of adaptive solver runs: per-iteration records and node clouds.",
    version="1.0.0"
)


@app.get("/", include_in_schema=False)
async def read_root():
    return {"message": "Welcome to the mesh-free results API. Go to /docs for API documentation."}


@app.get(
    "/api/runs",
    response_model=schemas.APIResponse[List[schemas.RunSummary]],
    summary="List recorded runs",
    description="Returns every run directory with its problem, iteration count and best relative l-infinity error."
)
async def list_runs():
    try:
        data = crud.list_runs()
        return schemas.APIResponse(
            status="success",
            message=f"Found {len(data)} runs.",
            data=[schemas.RunSummary(**item) for item in data]
        )
    except Exception as e:
        logger.exception("Error listing runs.")
        raise HTTPException(status_code=500, detail=f"Internal Server Error: {e}")


@app.get(
    "/api/runs/{run}/records",
    response_model=schemas.APIResponse[List[IterationRecord]],
    summary="Get the iteration records of a run",
    description="Returns one record per adaptive iteration: node count, indicator range, errors, timings and order histogram."
)
async def get_run_records(
    run: str = Path(..., description="Run directory name.")
):
    try:
        data = crud.get_records(run)
        return schemas.APIResponse(
            status="success",
            message=f"Retrieved {len(data)} records for run '{run}'.",
            data=data
        )
    except InvalidRunName as e:
        raise HTTPException(status_code=400, detail=str(e))
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except Exception as e:
        logger.exception(f"Error retrieving records for run '{run}'.")
        raise HTTPException(status_code=500, detail=f"Internal Server Error: {e}")


@app.get(
    "/api/runs/{run}/iterations/{iteration}/nodes",
    response_model=schemas.APIResponse[List[schemas.NodeRow]],
    summary="Get the node cloud of one iteration",
    description="Returns node positions, types, spacing, order and indicator value of one iteration."
)
async def get_iteration_nodes(
    run: str = Path(..., description="Run directory name."),
    iteration: int = Path(..., ge=0, description="Adaptive iteration index."),
    limit: int = Query(1000, gt=0, le=1_000_000, description="Maximum number of nodes to return.")
):
    try:
        data = crud.get_nodes(run, iteration, limit)
        return schemas.APIResponse(
            status="success",
            message=f"Retrieved {len(data)} nodes of iteration {iteration} of run '{run}'.",
            data=[schemas.NodeRow(**item) for item in data]
        )
    except InvalidRunName as e:
        raise HTTPException(status_code=400, detail=str(e))
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except Exception as e:
        logger.exception(f"Error retrieving nodes of iteration {iteration} of run '{run}'.")
        raise HTTPException(status_code=500, detail=f"Internal Server Error: {e}")
