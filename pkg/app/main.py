"""
Orchestra simulator HTTP service
Stateless wrappers over the balanced-clustering tools.
"""

import os

from dotenv import load_dotenv
from fastapi import FastAPI

from app.routers import clustering

# Load environment variables from local.env
load_dotenv(dotenv_path="local.env")

app = FastAPI(
    title="Orchestra Simulator",
    description="Equal-size clustering, generalization bounds and anonymity accounting",
    version="0.1.0",
)

app.include_router(clustering.router, prefix="/api/clustering", tags=["clustering"])


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {"status": "healthy", "service": "Orchestra Simulator"}


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "app.main:app",
        host=os.getenv("ORCHESTRA_HOST", "127.0.0.1"),
        port=int(os.getenv("ORCHESTRA_PORT", "8000")),
    )
