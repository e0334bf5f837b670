"""FastAPI app: read-only lab endpoints over the i-SIR analysis services."""
import traceback

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from app.config import configure_logging
from app.routers import lab

# Логи приложения в stderr, уровень из LOG_LEVEL
configure_logging()

app = FastAPI(title="i-SIR Lab", description="Cost fit, cost minimum, discrete analysis, lambda projection")


@app.exception_handler(Exception)
async def global_exception_handler(request, exc: Exception):
    """В ответе 500 возвращаем текст ошибки для отладки."""
    return JSONResponse(
        status_code=500,
        content={
            "detail": str(exc),
            "type": type(exc).__name__,
            "traceback": traceback.format_exc(),
        },
    )


app.include_router(lab.health_router)
app.include_router(lab.router)
