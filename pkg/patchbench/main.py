from fastapi import FastAPI

from patchbench import __version__
from patchbench.routers.corpus import router as corpus_router
from patchbench.routers.results import router as results_router

app = FastAPI(title="patchbench", version=__version__)

app.include_router(results_router)
app.include_router(corpus_router)


@app.get("/health")
def health():
    return {"ok": True}
