import json
from datetime import datetime

from app.api import api
from flask import make_response, request
from helpers import run_listing


def dthandler(obj):
    """Handle datetime objects in JSON serialization."""
    return obj.isoformat() if isinstance(obj, datetime) else None


def json_response(resp, status=200):
    response = make_response(json.dumps(resp, default=dthandler, sort_keys=False), status)
    response.headers["Content-Type"] = "application/json"
    return response


@api.route("/")
def listing():
    pagination_args = {}
    for arg in ["limit", "offset", "order_by", "sort_order"]:
        if request.args.get(arg):
            pagination_args[arg] = request.args[arg]

    try:
        runs, query, count = run_listing(**pagination_args)
    except ValueError as e:
        return json_response({"status": "error", "message": str(e)}, status=400)

    records = [dict(r._mapping) for r in runs]

    meta = {"total_count": count}
    meta.update(query)

    resp = {
        "status": "ok",
        "meta": meta,
        "records": records,
    }

    return json_response(resp)
