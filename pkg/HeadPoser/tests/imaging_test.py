import os
import shutil
import tempfile
import unittest

import numpy

from HeadPoser.errors import DimensionMismatchError, ImageFormatError, InputFileError
from HeadPoser.imaging import NEIGHBOURS_8, EdgePool, EdgePoint, Image, SilhouetteMask, \
    compute_edge_normal, detect_color_edges, edge_normal_field, load_image, load_mask, \
    minmax_sharpen, render_overlay, save_image


def neighbourhood_extremes(band):
    """In-frame 8-neighbourhood min and max, centre excluded, by brute
    force over shifted copies."""
    h, w = band.shape
    lo = numpy.full((h, w), 256)
    hi = numpy.full((h, w), -1)
    padded_lo = numpy.full((h + 2, w + 2), 256)
    padded_hi = numpy.full((h + 2, w + 2), -1)
    padded_lo[1:-1, 1:-1] = band
    padded_hi[1:-1, 1:-1] = band
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            lo = numpy.minimum(lo, padded_lo[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx])
            hi = numpy.maximum(hi, padded_hi[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx])
    return lo, hi


class NetpbmTest(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def _write(self, name, content):
        path = os.path.join(self.tmpdir, name)
        with open(path, 'wb') as hdl:
            hdl.write(content)
        return path

    def test_load_gray_with_comment(self):
        path = self._write('a.pgm', b'P5\n# made by hand\n3 2\n255\n' + bytes(bytearray(range(6))))
        img = load_image(path)
        self.assertEqual((img.width, img.height, img.bands), (3, 2, 1))
        self.assertEqual(img.data[1, 2, 0], 5)

    def test_save_and_load_color(self):
        rng = numpy.random.RandomState(3)
        img = Image.from_array(rng.randint(0, 256, size=(4, 5, 3)))
        path = os.path.join(self.tmpdir, 'b.ppm')
        save_image(img, path)
        with open(path, 'rb') as hdl:
            self.assertTrue(hdl.read().startswith(b'P6\n5 4\n255\n'))
        self.assertEqual(load_image(path), img)

    def test_random_round_trip(self):
        rng = numpy.random.RandomState(8)
        for i in range(25):
            bands = rng.choice([1, 3])
            shape = (rng.randint(1, 13), rng.randint(1, 13))
            if bands == 3:
                shape += (3,)
            img = Image.from_array(rng.randint(0, 256, size=shape))
            path = os.path.join(self.tmpdir, 'r{0}.{1}'.format(i, 'ppm' if bands == 3
                                                               else 'pgm'))
            save_image(img, path)
            again = load_image(path)
            self.assertEqual((again.width, again.height, again.bands),
                             (img.width, img.height, img.bands))
            self.assertEqual(again, img)

    def test_missing_file(self):
        path = os.path.join(self.tmpdir, 'nope.pgm')
        with self.assertRaises(InputFileError) as ctx:
            load_image(path)
        self.assertIn(path, str(ctx.exception))

    def test_ascii_format_rejected(self):
        path = self._write('c.pgm', b'P2\n1 1\n255\n7\n')
        with self.assertRaises(ImageFormatError) as ctx:
            load_image(path)
        self.assertEqual(ctx.exception.kind, 'unsupported-format')

    def test_maxval_rejected(self):
        path = self._write('d.pgm', b'P5\n1 1\n65535\n\x00\x00')
        with self.assertRaises(ImageFormatError) as ctx:
            load_image(path)
        self.assertEqual(ctx.exception.kind, 'bad-maxval')

    def test_truncated_payload(self):
        path = self._write('e.ppm', b'P6\n2 2\n255\n' + b'\x00' * 5)
        with self.assertRaises(ImageFormatError) as ctx:
            load_image(path)
        self.assertEqual(ctx.exception.kind, 'truncated')

    def test_mask_threshold(self):
        path = self._write('m.pgm', b'P5\n3 1\n255\n' + bytes(bytearray([127, 128, 255])))
        mask = load_mask(path)
        self.assertEqual(mask.inside.tolist(), [[False, True, True]])

    def test_color_mask_rejected(self):
        path = self._write('m.ppm', b'P6\n1 1\n255\n\xff\xff\xff')
        with self.assertRaises(DimensionMismatchError):
            load_mask(path)


class SilhouetteMaskTest(unittest.TestCase):
    def test_centroid_and_bounding_box(self):
        inside = numpy.zeros((5, 6), dtype=bool)
        inside[1:4, 2:5] = True
        mask = SilhouetteMask(inside)
        self.assertEqual(mask.centroid(), (3.0, 2.0))
        self.assertEqual(mask.bounding_box(), (1, 2, 4, 5))

    def test_dimension_check(self):
        mask = SilhouetteMask.full_frame(4, 3)
        with self.assertRaises(DimensionMismatchError):
            mask.check_matches(Image.from_array(numpy.zeros((4, 3), dtype=numpy.uint8)))


class MinMaxSharpenTest(unittest.TestCase):
    def test_closure_on_random_images(self):
        rng = numpy.random.RandomState(42)
        for _ in range(100):
            img = Image.from_array(rng.randint(0, 256, size=(64, 64)))
            out = minmax_sharpen(img).data[:, :, 0].astype(int)
            lo, hi = neighbourhood_extremes(img.data[:, :, 0].astype(int))
            self.assertTrue(((out == lo) | (out == hi)).all())

    def test_constant_image_is_fixed_point(self):
        for value in (0, 77, 255):
            img = Image.from_array(numpy.full((5, 7, 3), value, dtype=numpy.uint8))
            self.assertEqual(minmax_sharpen(img), img)

    def test_tie_goes_to_maximum(self):
        img = Image(3, 1, 1, [0, 5, 10])
        self.assertEqual(int(minmax_sharpen(img).data[0, 1, 0]), 10)

    def test_single_pixel(self):
        img = Image(1, 1, 1, [42])
        self.assertEqual(minmax_sharpen(img), img)

    def test_outside_region_copied(self):
        img = Image(3, 1, 1, [0, 5, 10])
        region = SilhouetteMask([[True, False, True]])
        self.assertEqual(minmax_sharpen(img, region).data[0, :, 0].tolist(), [5, 5, 5])


class EdgeTest(unittest.TestCase):
    def test_step_edge_is_two_sided(self):
        img = Image(2, 1, 1, [0, 255])
        pool = detect_color_edges(img, thresholds=[50])
        self.assertEqual(sorted((p.x, p.y) for p in pool.points), [(0, 0), (1, 0)])
        self.assertTrue(all(p.normal_angle == 0.0 for p in pool.points))

    def test_threshold_is_strict(self):
        img = Image(2, 1, 1, [0, 50])
        self.assertEqual(len(detect_color_edges(img, thresholds=[50])), 0)
        self.assertEqual(len(detect_color_edges(img, thresholds=[49])), 2)

    def test_diagonal_neighbours(self):
        img = Image(2, 2, 1, [0, 0, 0, 200])
        pool = detect_color_edges(img, thresholds=[30])
        self.assertEqual(len(pool), 4)

    def test_bands_are_independent(self):
        img = Image(2, 1, 3, [0, 0, 0, 0, 200, 0])
        pool = detect_color_edges(img, thresholds=[30, 30, 30])
        self.assertEqual(sorted(set(p.band for p in pool.points)), [1])
        self.assertEqual(pool.band_count().tolist(), [[1, 1]])

    def test_threshold_arity(self):
        with self.assertRaises(DimensionMismatchError):
            detect_color_edges(Image(2, 1, 3, [0] * 6), thresholds=[30])

    def test_region_restricts_pairs(self):
        img = Image(3, 1, 1, [0, 255, 255])
        region = SilhouetteMask([[False, True, True]])
        self.assertEqual(len(detect_color_edges(img, region, thresholds=[30])), 0)

    def test_blank_image_has_no_edges(self):
        img = Image.from_array(numpy.full((10, 10, 3), 90, dtype=numpy.uint8))
        pool = detect_color_edges(img)
        self.assertEqual(len(pool), 0)
        self.assertEqual(pool.n_dropped, 0)

    def test_normal_points_towards_bright(self):
        img = Image.from_array(numpy.array([[0, 0, 0], [0, 0, 0], [255, 255, 255]],
                                           dtype=numpy.uint8))
        angle = compute_edge_normal(img, 1, 1, 0)
        self.assertAlmostEqual(angle, numpy.pi / 2)

    def test_normal_field_matches_pointwise(self):
        rng = numpy.random.RandomState(1)
        img = Image.from_array(rng.randint(0, 256, size=(6, 7)))
        nx, ny = edge_normal_field(img, 0)
        for y in range(6):
            for x in range(7):
                angle = compute_edge_normal(img, x, y, 0)
                norm = numpy.hypot(nx[y, x], ny[y, x])
                self.assertAlmostEqual(numpy.cos(angle), nx[y, x] / norm)
                self.assertAlmostEqual(numpy.sin(angle), ny[y, x] / norm)

    def test_linear_ramp_normal(self):
        rng = numpy.random.RandomState(5)
        ys, xs = numpy.mgrid[0:7, 0:7]
        for _ in range(30):
            a, b = rng.randint(-10, 11, size=2)
            if a == 0 and b == 0:
                continue
            img = Image.from_array(130 + a * xs + b * ys)
            expected = numpy.arctan2(b, a)
            nx, ny = edge_normal_field(img, 0)
            for y in range(1, 6):
                for x in range(1, 6):
                    angle = compute_edge_normal(img, x, y, 0)
                    diff = (angle - expected + numpy.pi) % (2 * numpy.pi) - numpy.pi
                    self.assertLess(abs(diff), 1e-6)
                    field = numpy.arctan2(ny[y, x], nx[y, x])
                    diff = (field - expected + numpy.pi) % (2 * numpy.pi) - numpy.pi
                    self.assertLess(abs(diff), 1e-6)

    def test_random_edges_are_two_sided(self):
        rng = numpy.random.RandomState(6)
        for _ in range(10):
            h, w = rng.randint(2, 10, size=2)
            data = rng.randint(0, 256, size=(h, w, 3))
            thresholds = rng.randint(0, 200, size=3)
            pool = detect_color_edges(Image.from_array(data), thresholds=thresholds)
            self.assertEqual(pool.n_dropped, 0)
            for y in range(h):
                for x in range(w):
                    for band in range(3):
                        partners = [(x + dx, y + dy) for dx, dy in NEIGHBOURS_8
                                    if 0 <= x + dx < w and 0 <= y + dy < h
                                    and abs(data[y, x, band] - data[y + dy, x + dx, band])
                                    > thresholds[band]]
                        self.assertEqual(pool.contains(x, y, band), bool(partners))
                        for qx, qy in partners:
                            self.assertTrue(pool.contains(qx, qy, band))

    def test_random_edges_are_mirror_symmetric(self):
        rng = numpy.random.RandomState(7)
        for _ in range(10):
            data = rng.randint(0, 256, size=(rng.randint(2, 10), rng.randint(2, 10), 3))
            pool = detect_color_edges(Image.from_array(data), thresholds=[60, 60, 60])
            mirrored = detect_color_edges(Image.from_array(data[:, ::-1].copy()),
                                          thresholds=[60, 60, 60])
            self.assertEqual(mirrored.is_edge.tolist(), pool.is_edge[:, ::-1].tolist())
            edge = mirrored.is_edge
            # Mirroring x turns the normal angle t into pi - t.
            expected = numpy.pi - pool.angles[:, ::-1][edge]
            diff = (mirrored.angles[edge] - expected + numpy.pi) % (2 * numpy.pi) - numpy.pi
            self.assertTrue((numpy.abs(diff) < 1e-9).all())

            transposed = detect_color_edges(
                Image.from_array(data.transpose(1, 0, 2).copy()), thresholds=[60, 60, 60])
            self.assertEqual(transposed.is_edge.tolist(),
                             pool.is_edge.transpose(1, 0, 2).tolist())

    def test_pool_membership(self):
        pool = EdgePool.from_points([EdgePoint(1, 0, 0, 1.0, 200),
                                     EdgePoint(1, 0, 0, 2.0, 200)], 2, 1, 1)
        self.assertEqual(len(pool), 1)
        self.assertTrue(pool.contains(1, 0, 0))
        self.assertFalse(pool.contains(0, 0, 0))
        self.assertFalse(pool.contains(5, 0, 0))


class OverlayTest(unittest.TestCase):
    def test_overlay_is_rgb_copy(self):
        img = Image.from_array(numpy.zeros((20, 30), dtype=numpy.uint8))
        out = render_overlay(img, [(10, 10)], arrow=((10, 10), (25, 10)))
        self.assertEqual(out.bands, 3)
        self.assertEqual(out.data[10, 20].tolist(), [255, 255, 255])
        self.assertEqual(out.data[10, 6].tolist(), [255, 0, 0])
        self.assertEqual(img.data.max(), 0)


if __name__ == '__main__':
    unittest.main()
