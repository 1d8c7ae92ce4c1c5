"""
Regions (neighbourhood spatial units), the region registry, POI-to-region
assignment and inter-region distances

"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Iterator

import aiofiles
import numpy as np
from pydantic import Field, root_validator, validator
from shapely import STRtree
from shapely.geometry import MultiPolygon, Point, Polygon, shape
from shapely.geometry.base import BaseGeometry
from sortedcollections import SortedDict  # type: ignore

from pyutils import JSONExportable

from .errors import DataError
from .poi import PoiRecord
from .profile import PoiHistogram

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

EARTH_RADIUS_KM: float = 6371.0


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km between two WGS84 points"""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    d_phi = math.radians(lat2 - lat1)
    d_lambda = math.radians(lon2 - lon1)
    a = (
        math.sin(d_phi / 2) ** 2
        + math.cos(phi1) * math.cos(phi2) * math.sin(d_lambda / 2) ** 2
    )
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


###########################################
#
# Region()
#
###########################################


class Region(JSONExportable):
    # fmt: off
    region_id   : int                   = Field(default=...)
    name        : str                   = Field(default="")
    lat         : float                 = Field(default=...)
    lon         : float                 = Field(default=...)
    boundary    : BaseGeometry | None   = Field(default=None, exclude=True)
    # fmt: on

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False
        allow_population_by_field_name = True

    @validator("region_id")
    def check_id(cls, v: int) -> int:
        if v < 0:
            raise ValueError("region_id must be >= 0")
        return v

    @validator("lat")
    def check_lat(cls, v: float) -> float:
        if v < -90 or v > 90:
            raise ValueError(f"centroid lat has to be within [-90, 90]: {v}")
        return v

    @validator("lon")
    def check_lon(cls, v: float) -> float:
        if v < -180 or v > 180:
            raise ValueError(f"centroid lon has to be within [-180, 180]: {v}")
        return v

    @validator("boundary")
    def check_boundary(cls, v: BaseGeometry | None) -> BaseGeometry | None:
        if v is not None and not isinstance(v, (Polygon, MultiPolygon)):
            raise ValueError(f"region boundary must be a (Multi)Polygon: {v.geom_type}")
        return v

    @root_validator(skip_on_failure=True)
    def _centroid_inside(cls, values: dict[str, Any]) -> dict[str, Any]:
        boundary: BaseGeometry | None = values["boundary"]
        if boundary is not None and not boundary.covers(
            Point(values["lon"], values["lat"])
        ):
            message(
                f"region {values['region_id']}: centroid ({values['lat']}, {values['lon']}) is outside its boundary"
            )
        return values

    @property
    def index(self) -> int:
        return self.region_id

    @classmethod
    def ring_centroid(cls, boundary: BaseGeometry) -> tuple[float, float]:
        """Arithmetic mean (lat, lon) of the exterior-ring vertices.
        The largest polygon is used for MultiPolygons"""
        polygon: Polygon
        if isinstance(boundary, MultiPolygon):
            polygon = max(boundary.geoms, key=lambda p: p.area)
        elif isinstance(boundary, Polygon):
            polygon = boundary
        else:
            raise ValueError(f"unsupported geometry: {boundary.geom_type}")
        coords = list(polygon.exterior.coords)[:-1]  # ring is closed
        lon: float = sum(c[0] for c in coords) / len(coords)
        lat: float = sum(c[1] for c in coords) / len(coords)
        return lat, lon

    @classmethod
    def from_feature(cls, feature: dict[str, Any]) -> "Region":
        """Create Region from a GeoJSON feature with an integer 'region_id' property"""
        props: dict[str, Any] = feature.get("properties") or dict()
        if "region_id" not in props:
            raise ValueError("feature has no 'region_id' property")
        region_id = props["region_id"]
        if isinstance(region_id, bool) or not isinstance(region_id, int):
            raise ValueError(f"region_id must be an integer: {region_id}")
        boundary: BaseGeometry | None = None
        if (geometry := feature.get("geometry")) is not None:
            boundary = shape(geometry)
        lat: float
        lon: float
        if "centroid_lat" in props and "centroid_lon" in props:
            lat, lon = float(props["centroid_lat"]), float(props["centroid_lon"])
        elif boundary is not None:
            lat, lon = cls.ring_centroid(boundary)
        else:
            raise ValueError(f"region {region_id} has neither geometry nor centroid")
        return cls(
            region_id=region_id,
            name=str(props.get("name", region_id)),
            lat=lat,
            lon=lon,
            boundary=boundary,
        )


###########################################
#
# RegionRegistry()
#
###########################################


class RegionRegistry:
    """Regions by region_id. Immutable after load"""

    def __init__(self, regions: Iterable[Region] = ()):
        self._regions: SortedDict[int, Region] = SortedDict()
        self._tree: STRtree | None = None
        self._tree_ids: list[int] = list()
        self._centroids: np.ndarray | None = None
        for region in regions:
            self.add(region)

    def add(self, region: Region) -> None:
        if region.region_id in self._regions:
            raise DataError(f"duplicate region_id: {region.region_id}")
        self._regions[region.region_id] = region
        self._tree = None
        self._centroids = None

    def __len__(self) -> int:
        return len(self._regions)

    @property
    def R(self) -> int:
        return len(self._regions)

    def __iter__(self) -> Iterator[Region]:
        return iter(self._regions.values())

    def __contains__(self, region_id: int) -> bool:
        return region_id in self._regions

    def __getitem__(self, region_id: int) -> Region:
        try:
            return self._regions[region_id]
        except KeyError:
            raise DataError(f"unknown region_id: {region_id}")

    def region_ids(self) -> list[int]:
        return list(self._regions.keys())

    def _polygon_index(self) -> STRtree | None:
        if self._tree is None:
            self._tree_ids = [r.region_id for r in self if r.boundary is not None]
            if len(self._tree_ids) > 0:
                self._tree = STRtree([self._regions[i].boundary for i in self._tree_ids])
        return self._tree

    def locate(self, lat: float, lon: float) -> int:
        """Region covering the point (boundary counts as inside, lowest id wins),
        else the region with the nearest centroid"""
        if (tree := self._polygon_index()) is not None:
            hits = tree.query(Point(lon, lat), predicate="covered_by")
            if len(hits) > 0:
                return min(self._tree_ids[int(h)] for h in hits)
        return self.nearest(lat, lon)

    def _centroid_radians(self) -> np.ndarray:
        """(lat, lon) of the centroids in radians, in region_id order"""
        if self._centroids is None:
            self._centroids = np.radians(
                np.array([(r.lat, r.lon) for r in self], dtype=np.float64).reshape(-1, 2)
            )
        return self._centroids

    def nearest(self, lat: float, lon: float) -> int:
        """Region with the nearest centroid, lowest id on ties"""
        if len(self) == 0:
            raise DataError("region registry is empty")
        c: np.ndarray = self._centroid_radians()
        phi, lam = math.radians(lat), math.radians(lon)
        # haversine term, monotonic in the distance
        a: np.ndarray = (
            np.sin((c[:, 0] - phi) / 2) ** 2
            + math.cos(phi) * np.cos(c[:, 0]) * np.sin((c[:, 1] - lam) / 2) ** 2
        )
        # argmin picks the first minimum, i.e. the lowest id
        return self.region_ids()[int(np.argmin(a))]


async def load_regions(filename: Path | str) -> RegionRegistry:
    """Load GeoJSON FeatureCollection of regions"""
    path = Path(filename)
    if not path.is_file():
        raise DataError(f"region file not found: {path}")
    try:
        async with aiofiles.open(path, mode="r", encoding="utf8") as f:
            doc: dict[str, Any] = json.loads(await f.read())
    except ValueError as err:
        raise DataError(f"could not parse GeoJSON {path}: {err}") from err

    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: not a GeoJSON FeatureCollection")
    registry = RegionRegistry()
    for ndx, feature in enumerate(doc.get("features", [])):
        try:
            registry.add(Region.from_feature(feature))
        except (ValueError, TypeError) as err:
            raise DataError(f"{path}: feature {ndx}: {err}") from err
    if len(registry) == 0:
        raise DataError(f"{path}: no regions found")
    verbose(f"loaded {len(registry)} regions from {path.name}")
    return registry


def assign_pois_to_regions(
    pois: Iterable[PoiRecord], registry: RegionRegistry, categories: int
) -> dict[int, PoiHistogram]:
    """Per-region POI category histograms. Every registry region gets a
    histogram, possibly all zeros"""
    if len(registry) == 0:
        raise DataError("region registry is empty")
    counts: dict[int, np.ndarray] = {
        region_id: np.zeros(categories, dtype=np.int64)
        for region_id in registry.region_ids()
    }
    assigned: int = 0
    for poi in pois:
        counts[registry.locate(poi.lat, poi.lon)][poi.category_id] += 1
        assigned += 1
    debug(f"assigned {assigned} POIs to {len(counts)} regions")
    return {
        region_id: PoiHistogram(counts=c.tolist(), total=int(c.sum()))
        for region_id, c in counts.items()
    }


def region_distance(a: int, b: int, registry: RegionRegistry) -> float:
    """Great-circle distance (km) between region centroids"""
    ra: Region = registry[a]
    rb: Region = registry[b]
    if a == b:
        return 0.0
    return haversine_km(ra.lat, ra.lon, rb.lat, rb.lon)
