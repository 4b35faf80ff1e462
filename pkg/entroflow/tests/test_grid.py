import numpy as np
import pytest

from entroflow.errors import DomainError, InputError
from entroflow.grid import (
    DensityField,
    Grid,
    div_a_grad_b,
    gradient_neumann,
    integrate,
    interpolate,
    laplacian_neumann,
    read_field_csv,
    read_field_json,
    write_field_csv,
    write_field_json,
)


class TestGrid:
    def test_cells(self):
        grid = Grid.interval(-1.0, 1.0, 8)
        assert grid.dx == (0.25,)
        assert grid.centers()[0] == pytest.approx(-0.875)
        assert len(grid.faces()) == 9
        assert grid.volume == pytest.approx(2.0)

    @pytest.mark.parametrize(
        "extent, n_cells",
        [
            (((0.0, 1.0),), (3,)),
            (((1.0, 0.0),), (10,)),
            (((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)), (4, 4, 4)),
            (((0.0, 1.0),), (10, 10)),
        ],
    )
    def test_invalid(self, extent, n_cells):
        with pytest.raises(InputError):
            Grid(extent=extent, n_cells=n_cells)


class TestDensityField:
    def test_uniform_mass(self):
        grid = Grid.rectangle([(0.0, 2.0), (0.0, 0.5)], [8, 6])
        assert DensityField.uniform(grid).mass == pytest.approx(1.0, abs=1e-14)

    def test_cosine_mass_exact(self, p0):
        """Cell midpoints are symmetric, so the cosine integrates to zero."""
        assert abs(p0.mass - 1.0) <= 1e-12

    def test_negative_values_rejected(self, unit_grid):
        with pytest.raises(InputError):
            DensityField(grid=unit_grid, values=np.full(200, -1.0))

    def test_values_frozen(self, p0):
        with pytest.raises(ValueError):
            p0.values[0] = 3.0

    def test_csv(self, p0, tmp_path):
        path = tmp_path / "p0.csv"
        write_field_csv(p0, path)
        loaded = read_field_csv(path, p0.grid)
        np.testing.assert_array_equal(loaded.values, p0.values)

    def test_csv_on_wrong_grid(self, p0, tmp_path):
        path = tmp_path / "p0.csv"
        write_field_csv(p0, path)
        with pytest.raises(InputError):
            read_field_csv(path, Grid.interval(0.0, 1.0, 100))

    def test_json_keeps_grid_and_layout(self, tmp_path):
        grid = Grid.rectangle([(0.0, 2.0), (0.0, 0.5)], [8, 6])
        field = DensityField.from_function(grid, lambda x, y: 1.0 + x + 0.1 * y, time_tag=0.25)
        path = tmp_path / "field.json"
        write_field_json(field, path)
        loaded = read_field_json(path)
        assert loaded.grid == grid
        assert loaded.time_tag == 0.25
        np.testing.assert_array_equal(loaded.values, field.values)

    def test_json_value_count_checked(self):
        header = {"grid": {"extent": [[0.0, 1.0]], "n_cells": [10]}, "values": [1.0] * 9}
        with pytest.raises(InputError):
            DensityField.from_json(header)
        with pytest.raises(InputError):
            DensityField.from_json({"values": [1.0] * 10})


class TestOperators:
    def test_gradient_zero_normal_at_walls(self, p0):
        grad = gradient_neumann(p0)
        assert grad.shape == (1, 200)
        assert grad[0, 0] == 0.0 and grad[0, -1] == 0.0

    def test_gradient_of_linear_profile_interior(self, unit_grid):
        x = unit_grid.centers()
        grad = gradient_neumann(3.0 * x, unit_grid)
        np.testing.assert_allclose(grad[0, 1:-1], 3.0)

    def test_laplacian_of_constant(self, unit_grid):
        np.testing.assert_allclose(laplacian_neumann(np.full(200, 2.0), unit_grid), 0.0)

    def test_no_flux_operator_conserves(self, p0):
        """The cell integral of div(a grad b) vanishes with zero boundary flux."""
        a = p0.values**2
        b = np.sin(3 * p0.grid.centers())
        assert abs(integrate(div_a_grad_b(a, b, p0.grid), p0.grid)) <= 1e-10

    def test_interpolate_linear_exact(self, unit_grid):
        field = DensityField(grid=unit_grid, values=1.0 + unit_grid.centers())
        assert interpolate(field, 0.4321) == pytest.approx(1.4321)

    def test_interpolate_outside(self, p0):
        with pytest.raises(DomainError):
            interpolate(p0, 1.5)
