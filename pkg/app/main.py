"""
RLD Dispatch API - Main Application Entry Point

Risk-limiting day-ahead dispatch on DC networks: nominal OPF, analytic
risk-limiting schedules and Monte Carlo policy evaluation.
"""
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from contextlib import asynccontextmanager
import logging
import time

from app.core.config import settings
from app.core.errors import DispatchError
from app.api.v1 import cases, dispatch
from app.services.case_io import BUNDLED_CASES

logger = logging.getLogger("app")


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan events"""
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    logger.info("%s starting (%s)", settings.app_name, settings.app_env)
    logger.info("API docs: http://%s:%s/docs", settings.host, settings.port)

    yield

    logger.info("%s shutting down", settings.app_name)


# Create FastAPI app
app = FastAPI(
    title=settings.app_name,
    description="""
## RLD Dispatch - Risk-Limiting Dispatch on DC Networks

Day-ahead scheduling under Gaussian forecast errors with linear day-ahead and real-time prices.

### Features

- **Nominal OPF**: DC optimal power flow on the forecast, with bus and line multipliers
- **Risk-Limiting Dispatch**: closed-form schedules for uncongested and singly congested networks
- **Policy Evaluation**: Monte Carlo comparison against the 3-sigma rule and the clairvoyant oracle
- **Price of Uncertainty**: integration cost per MW of forecast error, fitted and analytic

### Commands

| Endpoint | Output |
|----------|--------|
| `/v1/dispatch/nda` | generation, flows, multipliers, congestion |
| `/v1/dispatch/rld` | g*, perturbation, reduction diagnostics |
| `/v1/dispatch/evaluate` | cost rows per sigma and policy |
| `/v1/dispatch/price` | integration cost and fitted price |
    """,
    version=settings.app_version,
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan,
)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],  # Configure for production
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# Request timing middleware
@app.middleware("http")
async def add_process_time_header(request: Request, call_next):
    start_time = time.time()
    response = await call_next(request)
    process_time = time.time() - start_time
    response.headers["X-Process-Time"] = str(round(process_time, 3))
    return response


# Include routers
app.include_router(cases.router, prefix="/v1")
app.include_router(dispatch.router, prefix="/v1")


@app.get("/health", tags=["Health"])
async def health_check():
    """Detailed health check"""
    return {
        "status": "healthy",
        "environment": settings.app_env,
        "version": settings.app_version,
        "bundled_cases": list(BUNDLED_CASES),
    }


# Error handlers
@app.exception_handler(DispatchError)
async def dispatch_error_handler(request: Request, exc: DispatchError):
    """Domain errors carry their own machine-readable code"""
    return JSONResponse(
        status_code=422,
        content={
            "error": type(exc).__name__,
            "detail": exc.message,
            "code": exc.code,
        },
    )


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """Global exception handler"""
    logger.exception("unhandled error on %s", request.url.path)
    return JSONResponse(
        status_code=500,
        content={
            "error": "Internal server error",
            "detail": str(exc) if settings.debug else "An unexpected error occurred",
            "code": "INTERNAL_ERROR",
        },
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "app.main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.debug,
    )
