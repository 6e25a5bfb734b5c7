from app.extensions import db
from app.tracker import TRACKER_COLUMNS
from sqlalchemy import column, func, table


def run_listing(order_by="date_added", sort_order="desc", limit=500, offset=0):
    """Page through the run tracker. Raises ValueError on bad pagination arguments."""
    if order_by not in TRACKER_COLUMNS:
        raise ValueError(f"cannot order by {order_by!r}")
    if sort_order not in ("asc", "desc"):
        raise ValueError(f"sort_order must be asc or desc, got {sort_order!r}")
    limit, offset = int(limit), int(offset)
    if limit < 0 or offset < 0:
        raise ValueError("limit and offset must be non-negative")

    view = table("run_tracker", *(column(c) for c in TRACKER_COLUMNS))
    order_by_clause = getattr(view.c[order_by], sort_order)()

    runs = db.session.execute(
        db.select(view).order_by(order_by_clause).limit(limit).offset(offset)
    )

    count = db.session.execute(db.select(func.count()).select_from(view)).scalar()

    query = {
        "order_by": order_by,
        "sort_order": sort_order,
        "limit": limit,
        "offset": offset,
    }

    return runs, query, count
