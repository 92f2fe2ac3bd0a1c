# earlystop/__main__.py
from .app.main import app

app(prog_name="earlystop")
