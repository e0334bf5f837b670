"""Lab API: cost fit, closed-form cost minimum, small exact discrete analysis, xi projection."""
import logging
import math

from fastapi import APIRouter, HTTPException

from app.config import settings
from app.schemas import (
    AdaptProjectRequest,
    AdaptProjectResponse,
    CostFitRequest,
    CostMinimumRequest,
    CostMinimumResponse,
    CostResponse,
    DiscreteAnalysisRequest,
    DiscreteAnalysisResponse,
    HealthResponse,
    MinimiserRowOut,
)
from app.services.adapt_service import cost_minimum, fit_cost, minimiser_upper_bound, project
from app.services.analysis_service import LambdaGrid, analysis_report
from app.services.discrete_model import model_from_config
from app.services.spectral_service import SpectralError
from app.services.transition_service import transition_stack

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/v1", tags=["lab"])
health_router = APIRouter(tags=["health"])


@health_router.get("/health", response_model=HealthResponse)
async def health() -> HealthResponse:
    return HealthResponse()


@router.post("/cost/fit", response_model=CostResponse)
async def cost_fit(body: CostFitRequest) -> CostResponse:
    """OLS по пилотным замерам, ответ в масштабе c(lambda) = a + lambda."""
    try:
        cost = fit_cost([(t.n, t.seconds) for t in body.timings])
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return CostResponse(a=cost.a, b=cost.b)


@router.post("/cost/minimum", response_model=CostMinimumResponse)
async def cost_min(body: CostMinimumRequest) -> CostMinimumResponse:
    try:
        m = cost_minimum(body.a, body.b, body.d)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    upper = None
    if body.w_hat is not None:
        upper = minimiser_upper_bound(body.w_hat, body.a, body.b)
    return CostMinimumResponse(lam_min=m.lam_min, u_min=m.u_min, lam_equiv=m.lam_equiv, lam_upper_bound=upper)


@router.post("/discrete/analysis", response_model=DiscreteAnalysisResponse)
def discrete_analysis(body: DiscreteAnalysisRequest) -> DiscreteAnalysisResponse:
    """Синхронный обработчик: FastAPI выполняет его в пуле потоков."""
    try:
        model = model_from_config(body.model)
        grid = LambdaGrid.from_config(body.grid)
        stack = transition_stack(
            model,
            grid.n_max,
            body.method,
            workers=1,
            budget=settings.enumeration_budget,
        )
        report = analysis_report(stack, body.cost_a, grid)
    except (ValueError, SpectralError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    logger.info("discrete analysis %s: %d violation(s)", model.name, len(report.violations))
    return DiscreteAnalysisResponse(
        name=model.name,
        w_hat=model.w_hat,
        minimisers=[
            MinimiserRowOut(
                a=r.a,
                lambda_G=r.lambda_G,
                lambda_H=r.lambda_H,
                minimisers=r.minimisers,
                so_G=r.so_G,
                so_H=r.so_H,
            )
            for r in report.rows
        ],
        violations=[str(v) for v in report.violations],
    )


@router.post("/adapt/project", response_model=AdaptProjectResponse)
async def adapt_project(body: AdaptProjectRequest) -> AdaptProjectResponse:
    n_max = math.inf if body.n_max is None else body.n_max
    if n_max < 2:
        raise HTTPException(status_code=400, detail=f"N_max must be >= 2, got {body.n_max}")
    xi = project(body.xi, n_max)
    return AdaptProjectResponse(xi=xi, lam=1.0 + math.exp(xi))
